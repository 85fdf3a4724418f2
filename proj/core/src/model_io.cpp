#include "onsurf/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace onsurf {
namespace {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

class Writer {
 public:
  template <class T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("model file truncated while reading ") + what, pos_);
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'O', 'S', 'R', 'F'};

}  // namespace

std::vector<std::uint8_t> serialize_model(const MlpModel& model, const nlohmann::json& metadata) {
  const auto& a = model.arch;
  Writer w;
  for (char c : kMagic) w.put(c);
  w.put(kModelFormatVersion);
  w.put(static_cast<std::uint32_t>(a.input_dim));
  w.put(static_cast<std::uint32_t>(a.hidden_dim));
  w.put(static_cast<std::uint32_t>(a.num_layers));
  w.put(static_cast<std::uint32_t>(a.skip_layer));
  w.put(static_cast<std::uint32_t>(a.activation));
  w.put(a.beta);
  w.put(model.init_seed);
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const auto& W = model.weights[l];
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) w.put(W(i, j));
    for (Eigen::Index i = 0; i < model.biases[l].size(); ++i) w.put(model.biases[l][i]);
  }
  const std::string meta = metadata.dump();
  w.put(static_cast<std::uint64_t>(meta.size()));
  w.put_bytes(meta);
  return std::move(w.bytes);
}

LoadedModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  for (char c : kMagic) {
    const std::size_t at = r.pos();
    if (r.get<char>("magic") != c) throw FormatError("bad magic, not a model file", at);
  }
  const std::size_t version_at = r.pos();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kModelFormatVersion)
    throw VersionError("unsupported model format version " + std::to_string(version) + " (expected " +
                           std::to_string(kModelFormatVersion) + ")",
                       version_at);

  const std::size_t arch_at = r.pos();
  MlpArchitecture a;
  a.input_dim = r.get<std::uint32_t>("architecture");
  a.hidden_dim = r.get<std::uint32_t>("architecture");
  a.num_layers = r.get<std::uint32_t>("architecture");
  a.skip_layer = r.get<std::uint32_t>("architecture");
  const auto act = r.get<std::uint32_t>("architecture");
  a.beta = r.get<double>("architecture");
  if (act > static_cast<std::uint32_t>(Activation::relu)) throw FormatError("unknown activation id", arch_at);
  a.activation = static_cast<Activation>(act);
  try {
    a.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("invalid architecture: ") + e.what(), arch_at);
  }

  LoadedModel out;
  out.model.arch = a;
  out.model.init_seed = r.get<std::uint64_t>("init seed");
  for (std::size_t l = 0; l < a.num_layers; ++l) {
    const auto rows = static_cast<Eigen::Index>(a.layer_output_dim(l));
    const auto cols = static_cast<Eigen::Index>(a.layer_input_dim(l));
    if (r.remaining() / sizeof(double) < static_cast<std::size_t>(rows * (cols + 1)))
      throw FormatError("model file truncated in parameters of layer " + std::to_string(l), r.pos());
    MatrixX W(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) W(i, j) = r.get<double>("weights");
    VectorX b(rows);
    for (Eigen::Index i = 0; i < rows; ++i) b[i] = r.get<double>("biases");
    out.model.weights.push_back(std::move(W));
    out.model.biases.push_back(std::move(b));
  }
  if (!out.model.all_finite()) throw FormatError("non-finite parameter", arch_at);

  const std::size_t meta_at = r.pos();
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  if (meta_len > r.remaining()) throw FormatError("metadata length exceeds file size", meta_at);
  const std::size_t text_at = r.pos();
  const std::string text = r.get_string(static_cast<std::size_t>(meta_len), "metadata");
  try {
    out.metadata = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metadata is not valid JSON: ") + e.what(), text_at);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after metadata", r.pos());
  return out;
}

void save_model(const MlpModel& model, const std::filesystem::path& path, const nlohmann::json& metadata) {
  const auto bytes = serialize_model(model, metadata);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InvalidInput("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InvalidInput("failed writing " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot open model file " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace onsurf
