#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ink/decode.hpp"
#include "ink/model.hpp"
#include "ink/smoothing.hpp"
#include "ink/trainer.hpp"

namespace ink {

// Flat key=value settings for every stage of a run. Keys outside the known set
// are rejected, so a snapshot of this object fully describes a run.
class RunConfig {
 public:
  RunConfig();

  // Plain-text "key = value" lines; '#' starts a comment.
  static RunConfig from_file(const std::filesystem::path& path);
  void merge_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  // "key=value"
  void set_assignment(const std::string& assignment);

  bool known(const std::string& key) const { return values_.contains(key); }
  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string snapshot() const;
  void write_snapshot(const std::filesystem::path& path) const;

  ModelConfig model_config(int vocab_size) const;
  AdapterActivation adapter_activation() const;
  KernelSpec kernel() const;
  // prefix "pretrain" or "train"
  TrainConfig train_config(const std::string& prefix) const;
  DecodeOptions decode_options() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ink
