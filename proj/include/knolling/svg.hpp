#pragma once

#include <string>

#include "knolling/core.hpp"

namespace knolling {

// Workspace drawing with index-labelled rectangles; fill shade tracks the
// object's area.
std::string layout_svg(const Layout& layout, const Workspace& ws = {},
                       const std::string& title = "");

void write_svg(const std::string& path, const Layout& layout, const Workspace& ws = {},
               const std::string& title = "");

}  // namespace knolling
