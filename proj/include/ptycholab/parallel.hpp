#pragma once

namespace ptycholab::par {

// Global switch for the OpenMP kernel paths. The parallel paths write
// disjoint outputs and reduce in a fixed order, so results are
// bit-identical to the serial reference either way.
bool enabled();
void set_enabled(bool on);

}  // namespace ptycholab::par
