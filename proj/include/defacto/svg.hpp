#pragma once

#include <optional>
#include <string>

#include "defacto/estimands.hpp"

namespace defacto {

// Self-contained vector chart of a tipping-point sweep: estimate line,
// CI band, zero line, and the crossing marker when present. The CSV is
// the authoritative output; this is a convenience view.
std::string tipping_svg(const TippingResult& result,
                        const std::string& k_label);

}  // namespace defacto
