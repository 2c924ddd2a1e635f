#pragma once

namespace dropkit {

enum class Mode { train, eval };

}  // namespace dropkit
