#pragma once

// Binary checkpoint container. Layout (little-endian):
//   "RGR1" | u32 version | u32 n_meta | n_meta x (str key, str value)
//   | u32 n_arrays | n_arrays x (str name, u32 rows, u32 cols, f32[rows*cols])
// where str = u32 length + bytes. Arrays are row-major.
// Names must fall in codebook.{l}, backbone.* or rank_head.*.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rgr/neural_core.hpp"
#include "rgr/sid_tokenizer.hpp"
#include "rgr/trainer.hpp"

namespace rgr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor<float>> arrays;

  const Matrix<float>* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Raises DigestMismatch unless metadata["config_digest"] equals `expected`
// (an empty expectation skips the check).
void check_digest(const Checkpoint& ckpt, const std::string& expected);

// Codebooks alone (the tokenize artifact).
Checkpoint pack_codebooks(const Codebooks& codebooks, const std::string& config_digest);
Codebooks unpack_codebooks(const Checkpoint& ckpt);

// Everything retrieval needs: model config, codebooks, backbone and the
// optional rank head.
struct ModelBundle {
  ModelConfig config;
  Codebooks codebooks;
  TrainedModel model;
  int model_version = 0;
};

Checkpoint pack_model(const ModelBundle& bundle, const std::string& config_digest);
// Rejects arrays that are neither codebooks nor parameters of the declared
// model.
ModelBundle unpack_model(const Checkpoint& ckpt);

}  // namespace rgr
