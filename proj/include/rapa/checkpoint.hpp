#pragma once

#include <string>

#include "rapa/model.hpp"

namespace rapa::ckpt {

// Layout under dir/: manifest.json (model dimensions/flags, tensor lists),
// params/<name>.rapt for every parameter, buffers/<name>.{mean,var}.rapt
// for every normalization layer's running statistics.
void save_checkpoint(const std::string& dir, Model<float>& model);

// Restores parameters and running statistics into a model that must have
// been built with matching dimensions; mismatches name the bad tensor.
void load_checkpoint(const std::string& dir, Model<float>& model);

}  // namespace rapa::ckpt
