#ifndef TACT_CHECKPOINT_HPP
#define TACT_CHECKPOINT_HPP

#include <string>

#include "tact/model.hpp"

// Parameter checkpoints: one binary file holding a little-endian uint64
// header length, a JSON header (model config + tensor table with names,
// shapes, and byte offsets), then all tensors as little-endian 32-bit floats.

namespace tact::model {

void save_checkpoint(const Model<float>& m, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

// header-only peek, used for config introspection without loading weights
ModelConfig read_checkpoint_config(const std::string& path);

}  // namespace tact::model

#endif
