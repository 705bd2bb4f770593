#pragma once

// Model checkpoint container: magic LBCK, u32 version, a JSON header
// (architecture plus caller-supplied metadata such as schedule and seed),
// then named little-endian f64 parameter blocks.

#include <map>
#include <string>

#include "leakbench/lstm.hpp"
#include "leakbench/mlp.hpp"
#include "leakbench/svr.hpp"

namespace leakbench {

using CheckpointMeta = std::map<std::string, std::string>;

void save_mlp_checkpoint(const MlpModel& model, const std::string& path,
                         const CheckpointMeta& metadata = {});
MlpModel load_mlp_checkpoint(const std::string& path, CheckpointMeta* metadata = nullptr);

void save_lstm_checkpoint(const LstmModel& model, const std::string& path,
                          const CheckpointMeta& metadata = {});
LstmModel load_lstm_checkpoint(const std::string& path, CheckpointMeta* metadata = nullptr);

void save_svr_checkpoint(const SvrModel& model, const std::string& path,
                         const CheckpointMeta& metadata = {});
SvrModel load_svr_checkpoint(const std::string& path, CheckpointMeta* metadata = nullptr);

}  // namespace leakbench
