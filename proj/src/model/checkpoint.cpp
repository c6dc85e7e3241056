#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "hitlsep/error.hpp"
#include "hitlsep/setup.hpp"

namespace hitlsep {

SeparationSetup SeparationSetup::canonical() {
  SeparationSetup s;
  s.sample_rate = 22050;
  s.stft = {2048, 512};
  s.net = NetConfig{};
  s.net.input = {1024, 512};
  s.net.depth = 6;
  s.net.base_channels = 16;
  return s;
}

SeparationSetup SeparationSetup::desk() {
  SeparationSetup s;
  s.sample_rate = 8000;
  s.stft = {128, 32};
  s.net.input = {64, 64};
  s.net.depth = 3;
  s.net.base_channels = 4;
  return s;
}

void SeparationSetup::validate() const {
  if (sample_rate <= 0) throw ValidationError("sample_rate must be positive");
  stft.validate();
  net.validate();
  if (net.input.freq > stft.n_bins()) {
    throw ValidationError("model needs " + std::to_string(net.input.freq) + " frequency bins but n_fft " +
                          std::to_string(stft.n_fft) + " yields " + std::to_string(stft.n_bins()));
  }
}

void to_json(nlohmann::json& j, const SeparationSetup& s) {
  j = nlohmann::json{{"sample_rate", s.sample_rate},
                     {"n_fft", s.stft.n_fft},
                     {"hop", s.stft.hop},
                     {"input_freq", s.net.input.freq},
                     {"input_time", s.net.input.time},
                     {"depth", s.net.depth},
                     {"base_channels", s.net.base_channels},
                     {"kernel", s.net.kernel},
                     {"leaky_slope", s.net.leaky_slope},
                     {"dropout_p", s.net.dropout_p},
                     {"bn_momentum", s.net.bn_momentum},
                     {"bn_eps", s.net.bn_eps},
                     {"seed", s.net.seed}};
}

void from_json(const nlohmann::json& j, SeparationSetup& s) {
  SeparationSetup d = SeparationSetup::canonical();
  if (j.contains("preset")) {
    const auto name = j.at("preset").get<std::string>();
    if (name == "desk") {
      d = SeparationSetup::desk();
    } else if (name != "canonical") {
      throw ValidationError("unknown setup preset '" + name + "'");
    }
  }
  s.sample_rate = j.value("sample_rate", d.sample_rate);
  s.stft.n_fft = j.value("n_fft", d.stft.n_fft);
  s.stft.hop = j.value("hop", d.stft.hop);
  s.net.input.freq = j.value("input_freq", d.net.input.freq);
  s.net.input.time = j.value("input_time", d.net.input.time);
  s.net.depth = j.value("depth", d.net.depth);
  s.net.base_channels = j.value("base_channels", d.net.base_channels);
  s.net.kernel = j.value("kernel", d.net.kernel);
  s.net.leaky_slope = j.value("leaky_slope", d.net.leaky_slope);
  s.net.dropout_p = j.value("dropout_p", d.net.dropout_p);
  s.net.bn_momentum = j.value("bn_momentum", d.net.bn_momentum);
  s.net.bn_eps = j.value("bn_eps", d.net.bn_eps);
  s.net.seed = j.value("seed", d.net.seed);
}

SeparationSetup load_setup(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed config '" + path.string() + "': " + e.what());
  }
  SeparationSetup s = j.get<SeparationSetup>();
  s.validate();
  return s;
}

namespace {

constexpr char kMagic[8] = {'H', 'S', 'E', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::vector<char>& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ValidationError("truncated checkpoint '" + origin_ + "'");
  }

 private:
  const std::vector<char>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string shape_str(WindowShape s) {
  return "(" + std::to_string(s.freq) + ", " + std::to_string(s.time) + ")";
}

void put_tensor(std::vector<char>& out, const std::string& name, const std::vector<int>& shape,
                const std::vector<float>& values) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (float v : values) put<float>(out, v);
}

}  // namespace

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  const auto& s = ckpt.setup;
  const auto& c = ckpt.net.config();
  std::ostringstream header;
  header << "format_version=" << kFormatVersion << "\n"
         << "sample_rate=" << s.sample_rate << "\n"
         << "n_fft=" << s.stft.n_fft << "\n"
         << "hop=" << s.stft.hop << "\n"
         << "input_freq=" << c.input.freq << "\n"
         << "input_time=" << c.input.time << "\n"
         << "depth=" << c.depth << "\n"
         << "base_channels=" << c.base_channels << "\n"
         << "kernel=" << c.kernel << "\n"
         << "leaky_slope=" << fmt(c.leaky_slope) << "\n"
         << "dropout_p=" << fmt(c.dropout_p) << "\n"
         << "bn_momentum=" << fmt(c.bn_momentum) << "\n"
         << "bn_eps=" << fmt(c.bn_eps) << "\n"
         << "seed=" << c.seed << "\n"
         << "adam.lr=" << fmt(ckpt.adam.lr) << "\n"
         << "adam.beta1=" << fmt(ckpt.adam.beta1) << "\n"
         << "adam.beta2=" << fmt(ckpt.adam.beta2) << "\n"
         << "adam.eps=" << fmt(ckpt.adam.eps) << "\n"
         << "adam.step_count=" << ckpt.adam.step_count << "\n"
         << "mode=" << (ckpt.net.mode == NetMode::Train ? "train" : "eval") << "\n";
  const std::string h = header.str();

  std::vector<char> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(h.size()));
  out.insert(out.end(), h.begin(), h.end());

  const bool has_moments = ckpt.adam.m.size() == ckpt.net.params.size();
  const std::size_t n = ckpt.net.params.size() * (has_moments ? 3 : 1) + ckpt.net.buffers.size();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(n));
  for (const auto& p : ckpt.net.params) put_tensor(out, p.name, p.shape, p.values);
  for (const auto& b : ckpt.net.buffers) put_tensor(out, b.name, b.shape, b.values);
  if (has_moments) {
    for (std::size_t i = 0; i < ckpt.net.params.size(); ++i) {
      put_tensor(out, "adam.m:" + ckpt.net.params[i].name, ckpt.net.params[i].shape, ckpt.adam.m[i]);
      put_tensor(out, "adam.v:" + ckpt.net.params[i].name, ckpt.net.params[i].shape, ckpt.adam.v[i]);
    }
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::vector<char> bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(bytes, path.string());
  if (r.str(8) != std::string(kMagic, 8)) throw ValidationError("'" + path.string() + "' is not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw ValidationError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kFormatVersion) + ")");
  }
  const auto header_len = r.get<std::uint32_t>();
  std::map<std::string, std::string> kv;
  {
    std::istringstream hs(r.str(header_len));
    std::string line;
    while (std::getline(hs, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto key = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ValidationError("checkpoint header lacks '" + k + "'");
    return it->second;
  };

  Checkpoint ck;
  ck.setup.sample_rate = std::stoi(key("sample_rate"));
  ck.setup.stft = {std::stoi(key("n_fft")), std::stoi(key("hop"))};
  NetConfig& c = ck.setup.net;
  c.input = {std::stoi(key("input_freq")), std::stoi(key("input_time"))};
  c.depth = std::stoi(key("depth"));
  c.base_channels = std::stoi(key("base_channels"));
  c.kernel = std::stoi(key("kernel"));
  c.leaky_slope = std::stof(key("leaky_slope"));
  c.dropout_p = std::stof(key("dropout_p"));
  c.bn_momentum = std::stof(key("bn_momentum"));
  c.bn_eps = std::stof(key("bn_eps"));
  c.seed = std::stoull(key("seed"));
  ck.setup.validate();
  ck.net = MaskNet(c);
  ck.net.mode = key("mode") == "train" ? NetMode::Train : NetMode::Eval;
  ck.adam.lr = std::stod(key("adam.lr"));
  ck.adam.beta1 = std::stod(key("adam.beta1"));
  ck.adam.beta2 = std::stod(key("adam.beta2"));
  ck.adam.eps = std::stod(key("adam.eps"));
  ck.adam.step_count = std::stoull(key("adam.step_count"));

  std::map<std::string, NamedTensor<float>*> slots;
  for (auto& p : ck.net.params) slots[p.name] = &p;
  for (auto& b : ck.net.buffers) slots[b.name] = &b;
  std::map<std::string, std::size_t> param_index;
  for (std::size_t i = 0; i < ck.net.params.size(); ++i) param_index[ck.net.params[i].name] = i;

  const auto count = r.get<std::uint32_t>();
  std::size_t filled = 0;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.get<std::uint16_t>();
    const std::string name = r.str(name_len);
    const auto ndim = r.get<std::uint32_t>();
    std::vector<int> shape(ndim);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<int>(r.get<std::uint32_t>());
      n *= static_cast<std::size_t>(d);
    }
    std::vector<float> values(n);
    for (auto& v : values) v = r.get<float>();

    std::vector<float>* dest = nullptr;
    const std::vector<int>* expect = nullptr;
    if (name.rfind("adam.", 0) == 0) {
      const bool first = name.rfind("adam.m:", 0) == 0;
      const std::string pname = name.substr(7);
      auto it = param_index.find(pname);
      if (it == param_index.end()) throw ValidationError("checkpoint moment for unknown tensor '" + pname + "'");
      if (ck.adam.m.empty()) {
        for (const auto& p : ck.net.params) {
          ck.adam.m.emplace_back(p.size(), 0.0f);
          ck.adam.v.emplace_back(p.size(), 0.0f);
        }
      }
      dest = first ? &ck.adam.m[it->second] : &ck.adam.v[it->second];
      expect = &ck.net.params[it->second].shape;
    } else {
      auto it = slots.find(name);
      if (it == slots.end()) throw ValidationError("checkpoint tensor '" + name + "' does not belong to this network");
      dest = &it->second->values;
      expect = &it->second->shape;
      ++filled;
    }
    if (shape != *expect) throw ValidationError("checkpoint tensor '" + name + "' has an unexpected shape");
    *dest = std::move(values);
  }
  if (filled != slots.size()) throw ValidationError("checkpoint '" + path.string() + "' is missing tensors");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const NetConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  const NetConfig& got = ck.net.config();
  if (got.input != expected.input) {
    throw ValidationError("checkpoint input_shape " + shape_str(got.input) + " does not match configured " +
                          shape_str(expected.input));
  }
  if (got.depth != expected.depth) {
    throw ValidationError("checkpoint depth " + std::to_string(got.depth) + " does not match configured depth " +
                          std::to_string(expected.depth));
  }
  if (!(got == expected)) throw ValidationError("checkpoint network config does not match the configured one");
  return ck;
}

}  // namespace hitlsep
