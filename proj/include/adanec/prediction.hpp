#pragma once

#include "adanec/image.hpp"

namespace adanec {

// Estimated transmission and reflection layers of one input.
struct Prediction {
  Image transmission;
  Image reflection;

  bool operator==(const Prediction&) const = default;
};

}  // namespace adanec
