#pragma once

#include <string>

#include "radreport/model.hpp"

namespace radreport {

inline constexpr const char* kCodeVersion = "radreport 0.1.0";

// Checkpoint file layout: one JSON header line (format version, model
// config, head layout, vocab content hash, creation metadata, tensor
// name/shape table) followed by the tensors as little-endian float32 in
// header order. Bytes are a pure function of the model contents.
void save_checkpoint(const std::string& path, Model<float>& model, uint64_t vocab_hash,
                     const std::string& note);

struct CheckpointInfo {
    uint64_t vocab_hash = 0;
    std::string note;
};

Model<float> load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr);

}  // namespace radreport
