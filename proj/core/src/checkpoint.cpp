#include "minivla/core/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace minivla::core {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'L', 'A', 'C', 'P', '0', '1'};

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(static_cast<bool>(f), "checkpoint: unexpected end of file");
  return v;
}

void write_doubles(std::ofstream& f, const std::vector<double>& v) {
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& f, std::vector<double>& v) {
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(v.size() * sizeof(double)));
  check(static_cast<bool>(f), "checkpoint: unexpected end of file");
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const AdamW* opt) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.is_open(), "checkpoint: cannot open for write: " + path);
  f.write(kMagic, sizeof(kMagic));
  write_pod<uint64_t>(f, params.size());
  for (const auto& [name, t] : params.items()) {
    write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(f, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) write_pod<uint64_t>(f, static_cast<uint64_t>(d));
    write_doubles(f, t.vec());
  }
  write_pod<uint8_t>(f, opt ? 1 : 0);
  if (opt) {
    auto* o = const_cast<AdamW*>(opt);
    write_pod<uint64_t>(f, static_cast<uint64_t>(o->step_count()));
    write_pod<double>(f, o->config().schedule.base_lr);
    write_pod<uint64_t>(f, static_cast<uint64_t>(o->config().schedule.warmup_steps));
    write_pod<double>(f, o->config().beta1);
    write_pod<double>(f, o->config().beta2);
    write_pod<double>(f, o->config().eps);
    write_pod<double>(f, o->config().weight_decay);
    for (size_t i = 0; i < params.size(); ++i) {
      write_doubles(f, o->moment1()[i]);
      write_doubles(f, o->moment2()[i]);
    }
  }
  check(static_cast<bool>(f), "checkpoint: write failure: " + path);
}

void load_checkpoint(const std::string& path, ParamStore& params, AdamW* opt) {
  std::ifstream f(path, std::ios::binary);
  check(f.is_open(), "checkpoint: cannot open: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  check(static_cast<bool>(f) && std::memcmp(magic, kMagic, 8) == 0,
        "checkpoint: bad magic in " + path);
  const uint64_t n = read_pod<uint64_t>(f);
  check(n == params.size(), "checkpoint: parameter count mismatch (file " +
                                std::to_string(n) + ", model " +
                                std::to_string(params.size()) + ")");
  for (auto& [name, t] :
       const_cast<std::vector<std::pair<std::string, Tensor>>&>(params.items())) {
    const uint32_t len = read_pod<uint32_t>(f);
    std::string fname(len, '\0');
    f.read(fname.data(), len);
    check(static_cast<bool>(f), "checkpoint: unexpected end of file");
    check(fname == name, "checkpoint: parameter order mismatch: file has '" + fname +
                             "', model expects '" + name + "'");
    const uint32_t ndim = read_pod<uint32_t>(f);
    Shape s(ndim);
    for (uint32_t i = 0; i < ndim; ++i)
      s[i] = static_cast<int64_t>(read_pod<uint64_t>(f));
    check(s == t.shape(), "checkpoint: shape mismatch for " + name);
    read_doubles(f, t.vec());
  }
  const uint8_t has_opt = read_pod<uint8_t>(f);
  if (opt) {
    check(has_opt == 1, "checkpoint: file has no optimizer state: " + path);
    opt->set_step_count(static_cast<int64_t>(read_pod<uint64_t>(f)));
    read_pod<double>(f);    // base_lr: informational, config wins
    read_pod<uint64_t>(f);  // warmup_steps
    read_pod<double>(f);    // beta1
    read_pod<double>(f);    // beta2
    read_pod<double>(f);    // eps
    read_pod<double>(f);    // weight_decay
    for (size_t i = 0; i < params.size(); ++i) {
      read_doubles(f, opt->moment1()[i]);
      read_doubles(f, opt->moment2()[i]);
    }
  } else if (has_opt == 1) {
    // Parameters-only load from a full checkpoint is fine; skip the tail.
  }
}

bool checkpoint_has_optimizer(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.is_open(), "checkpoint: cannot open: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  check(static_cast<bool>(f) && std::memcmp(magic, kMagic, 8) == 0,
        "checkpoint: bad magic in " + path);
  const uint64_t n = read_pod<uint64_t>(f);
  for (uint64_t i = 0; i < n; ++i) {
    const uint32_t len = read_pod<uint32_t>(f);
    f.seekg(len, std::ios::cur);
    const uint32_t ndim = read_pod<uint32_t>(f);
    uint64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) numel *= read_pod<uint64_t>(f);
    f.seekg(static_cast<std::streamoff>(numel * sizeof(double)), std::ios::cur);
  }
  return read_pod<uint8_t>(f) == 1;
}

}  // namespace minivla::core
