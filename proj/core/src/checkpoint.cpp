#include "rgr/checkpoint.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "rgr/error.hpp"

namespace rgr {

namespace {

constexpr char kMagic[4] = {'R', 'G', 'R', '1'};
constexpr std::uint32_t kMaxString = 1u << 20;
constexpr std::uint64_t kMaxElements = 1ull << 28;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  require(in.gcount() == 4, ErrorCode::kFormatError, "checkpoint: truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_str(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  require(n <= kMaxString, ErrorCode::kFormatError, "checkpoint: string too long");
  std::string s(n, '\0');
  in.read(s.data(), n);
  require(static_cast<std::uint32_t>(in.gcount()) == n, ErrorCode::kFormatError, "checkpoint: truncated");
  return s;
}

bool starts_with(const std::string& s, const char* prefix) {
  return s.rfind(prefix, 0) == 0;
}

bool known_namespace(const std::string& name) {
  if (starts_with(name, "backbone.") || starts_with(name, "rank_head.")) return name.size() > 9;
  if (starts_with(name, "codebook.")) {
    const std::string rest = name.substr(9);
    if (rest.empty() || rest.size() > 3) return false;
    for (char c : rest)
      if (c < '0' || c > '9') return false;
    return true;
  }
  return false;
}

const std::string& meta(const Checkpoint& c, const std::string& key) {
  auto it = c.metadata.find(key);
  require(it != c.metadata.end(), ErrorCode::kFormatError, "checkpoint: missing metadata '" + key + "'");
  return it->second;
}

long long meta_int(const Checkpoint& c, const std::string& key) {
  const std::string& v = meta(c, key);
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), ErrorCode::kFormatError,
          "checkpoint: metadata '" + key + "' is not an integer");
  return out;
}

double meta_real(const Checkpoint& c, const std::string& key) {
  const std::string& v = meta(c, key);
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), ErrorCode::kFormatError,
          "checkpoint: metadata '" + key + "' is not a number");
  return out;
}

std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

std::vector<int> split_ints(const Checkpoint& c, const std::string& key) {
  const std::string& v = meta(c, key);
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    std::size_t comma = v.find(',', start);
    if (comma == std::string::npos) comma = v.size();
    int x = 0;
    auto [p, ec] = std::from_chars(v.data() + start, v.data() + comma, x);
    require(ec == std::errc() && p == v.data() + comma, ErrorCode::kFormatError,
            "checkpoint: metadata '" + key + "' is not an integer list");
    out.push_back(x);
    start = comma + 1;
  }
  return out;
}

void add_codebooks(Checkpoint& c, const Codebooks& cb) {
  for (int l = 0; l < cb.level_count(); ++l)
    c.arrays.push_back({"codebook." + std::to_string(l), cb.levels[static_cast<std::size_t>(l)].cast<float>()});
  c.metadata["m"] = std::to_string(cb.level_count());
  c.metadata["sizes"] = join_ints(cb.sizes());
}

}  // namespace

const Matrix<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a.value;
  return nullptr;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    require(known_namespace(a.name), ErrorCode::kInvalidArgument, "checkpoint: unknown array name " + a.name);
    put_str(out, a.name);
    put_u32(out, static_cast<std::uint32_t>(a.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(a.value.cols()));
    for (Eigen::Index i = 0; i < a.value.size(); ++i) {
      std::uint32_t bits;
      const float f = a.value.data()[i];
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  require(static_cast<bool>(out), ErrorCode::kIoError, "checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  require(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0, ErrorCode::kFormatError,
          "checkpoint: bad magic");
  const std::uint32_t version = get_u32(in);
  require(version == kCheckpointVersion, ErrorCode::kFormatError,
          "checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  const std::uint32_t n_meta = get_u32(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = get_str(in);
    std::string v = get_str(in);
    require(c.metadata.emplace(std::move(k), std::move(v)).second, ErrorCode::kFormatError,
            "checkpoint: duplicate metadata key");
  }
  const std::uint32_t n_arrays = get_u32(in);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = get_str(in);
    require(known_namespace(name), ErrorCode::kFormatError, "checkpoint: unknown array name " + name);
    require(c.find(name) == nullptr, ErrorCode::kFormatError, "checkpoint: duplicate array " + name);
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    require(static_cast<std::uint64_t>(rows) * cols <= kMaxElements, ErrorCode::kFormatError,
            "checkpoint: array too large");
    Matrix<float> m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      const std::uint32_t bits = get_u32(in);
      std::memcpy(m.data() + k, &bits, 4);
    }
    c.arrays.push_back({std::move(name), std::move(m)});
  }
  require(in.peek() == std::char_traits<char>::eof(), ErrorCode::kFormatError,
          "checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIoError, "cannot write " + path);
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIoError, "cannot open " + path);
  return read_checkpoint(in);
}

void check_digest(const Checkpoint& ckpt, const std::string& expected) {
  if (expected.empty()) return;
  auto it = ckpt.metadata.find("config_digest");
  const std::string got = it == ckpt.metadata.end() ? "" : it->second;
  require(got == expected, ErrorCode::kDigestMismatch,
          "checkpoint config digest " + got + " does not match " + expected);
}

Checkpoint pack_codebooks(const Codebooks& codebooks, const std::string& config_digest) {
  codebooks.validate();
  Checkpoint c;
  c.metadata["config_digest"] = config_digest;
  c.metadata["kind"] = "codebooks";
  add_codebooks(c, codebooks);
  return c;
}

Codebooks unpack_codebooks(const Checkpoint& ckpt) {
  const long long m = meta_int(ckpt, "m");
  const std::vector<int> sizes = split_ints(ckpt, "sizes");
  require(m >= 1 && static_cast<long long>(sizes.size()) == m, ErrorCode::kFormatError,
          "checkpoint: codebook metadata inconsistent");
  Codebooks cb;
  for (int l = 0; l < m; ++l) {
    const Matrix<float>* a = ckpt.find("codebook." + std::to_string(l));
    require(a != nullptr, ErrorCode::kFormatError, "checkpoint: missing codebook." + std::to_string(l));
    require(a->rows() == sizes[static_cast<std::size_t>(l)], ErrorCode::kFormatError,
            "checkpoint: codebook." + std::to_string(l) + " row count disagrees with sizes");
    cb.levels.push_back(a->cast<double>());
  }
  cb.validate();
  return cb;
}

Checkpoint pack_model(const ModelBundle& bundle, const std::string& config_digest) {
  Checkpoint c = pack_codebooks(bundle.codebooks, config_digest);
  c.metadata["kind"] = "model";
  const ModelConfig& mc = bundle.config;
  c.metadata["model.d_model"] = std::to_string(mc.d_model);
  c.metadata["model.n_layers"] = std::to_string(mc.n_layers);
  c.metadata["model.n_heads"] = std::to_string(mc.n_heads);
  c.metadata["model.vocab_sizes"] = join_ints(mc.vocab_sizes);
  c.metadata["model.max_seq_len"] = std::to_string(mc.max_seq_len);
  c.metadata["model.init_scale"] = format_real(mc.init_scale);
  c.metadata["variant"] = std::string(variant_name(bundle.model.variant));
  c.metadata["alpha"] = format_real(bundle.model.alpha);
  c.metadata["steps"] = std::to_string(bundle.model.steps_done);
  c.metadata["model_version"] = std::to_string(bundle.model_version);
  c.metadata["rank_head"] = bundle.model.head ? "1" : "0";
  for (const auto& t : bundle.model.backbone.params()) c.arrays.push_back(t);
  if (bundle.model.head)
    for (const auto& t : bundle.model.head->params()) c.arrays.push_back(t);
  return c;
}

ModelBundle unpack_model(const Checkpoint& ckpt) {
  require(meta(ckpt, "kind") == "model", ErrorCode::kFormatError, "checkpoint: not a model checkpoint");
  ModelConfig config;
  config.d_model = static_cast<int>(meta_int(ckpt, "model.d_model"));
  config.n_layers = static_cast<int>(meta_int(ckpt, "model.n_layers"));
  config.n_heads = static_cast<int>(meta_int(ckpt, "model.n_heads"));
  config.vocab_sizes = split_ints(ckpt, "model.vocab_sizes");
  config.max_seq_len = static_cast<int>(meta_int(ckpt, "model.max_seq_len"));
  config.init_scale = meta_real(ckpt, "model.init_scale");
  try {
    config.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormatError, std::string("checkpoint: ") + e.what());
  }
  Codebooks codebooks = unpack_codebooks(ckpt);
  require(codebooks.sizes() == config.vocab_sizes, ErrorCode::kFormatError,
          "checkpoint: codebook sizes disagree with model.vocab_sizes");
  const bool has_head = meta(ckpt, "rank_head") == "1";

  ParameterSet<float> backbone = Backbone<float>::empty_like(config);
  ParameterSet<float> head = RankHead<float>::empty_like(config.d_model);
  std::size_t matched = 0;
  auto fill = [&](ParameterSet<float>& set) {
    for (auto& t : set) {
      const Matrix<float>* a = ckpt.find(t.name);
      require(a != nullptr, ErrorCode::kFormatError, "checkpoint: missing array " + t.name);
      require(a->rows() == t.value.rows() && a->cols() == t.value.cols(), ErrorCode::kFormatError,
              "checkpoint: shape mismatch for " + t.name);
      t.value = *a;
      ++matched;
    }
  };
  fill(backbone);
  if (has_head) fill(head);
  // Anything left over is an array this model does not declare.
  for (const auto& a : ckpt.arrays) {
    bool ok = false;
    if (starts_with(a.name, "codebook."))
      ok = std::stoll(a.name.substr(9)) < codebooks.level_count();
    else if (starts_with(a.name, "rank_head."))
      ok = has_head && head.find(a.name) >= 0;
    else
      ok = backbone.find(a.name) >= 0;
    require(ok, ErrorCode::kFormatError, "checkpoint: unknown array name " + a.name);
  }
  require(ckpt.arrays.size() == matched + static_cast<std::size_t>(codebooks.level_count()),
          ErrorCode::kFormatError, "checkpoint: unexpected array count");

  std::optional<RankHead<float>> rank_head;
  if (has_head) rank_head.emplace(config.d_model, std::move(head));
  TrainedModel model{parse_variant(meta(ckpt, "variant")), meta_real(ckpt, "alpha"),
                     Backbone<float>(config, std::move(backbone)), std::move(rank_head), {},
                     static_cast<int>(meta_int(ckpt, "steps"))};
  return ModelBundle{config, std::move(codebooks), std::move(model),
                     static_cast<int>(meta_int(ckpt, "model_version"))};
}

}  // namespace rgr
