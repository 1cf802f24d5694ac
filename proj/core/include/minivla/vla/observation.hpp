#pragma once

#include <string>
#include <vector>

namespace minivla::vla {

// One environment step as the policy sees it: per-camera images (row-major
// H x W x C doubles in [0,1]), a proprioceptive vector and the current
// instruction.
struct Observation {
  std::vector<std::vector<double>> images;
  std::vector<double> proprio;
  std::string instruction;
};

}  // namespace minivla::vla
