#include "s3net/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace s3net {

static_assert(std::endian::native == std::endian::little, "checkpoints are written with native byte order");

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

class Reader {
public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void read(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError("truncated checkpoint " + path_.string());
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    read(&v, sizeof v);
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

private:
  std::filesystem::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  Reader in(path);
  char magic[4];
  in.read(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw DataError(path.string() + " is not a checkpoint");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const std::uint32_t count = in.u32();
  std::vector<CheckpointRecord> records(count);
  for (auto& r : records) {
    r.name.resize(in.u32());
    in.read(r.name.data(), r.name.size());
    r.rows = in.u32();
    r.cols = in.u32();
    r.values.resize(static_cast<std::size_t>(r.rows) * r.cols);
    in.read(r.values.data(), r.values.size() * sizeof(float));
  }
  if (!in.done()) throw DataError("trailing bytes in checkpoint " + path.string());
  return records;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_u32(out, r.rows);
    put_u32(out, r.cols);
    out.write(reinterpret_cast<const char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * sizeof(float)));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

template <typename Scalar>
std::vector<CheckpointRecord> checkpoint_records(const ParameterStore<Scalar>& store) {
  std::vector<CheckpointRecord> records;
  records.reserve(store.size());
  for (const auto& p : store.all()) {
    CheckpointRecord r{p.name, static_cast<std::uint32_t>(p.value.rows()), static_cast<std::uint32_t>(p.value.cols()), {}};
    r.values.resize(static_cast<std::size_t>(p.value.size()));
    Eigen::Map<Matrix<float>>(r.values.data(), p.value.rows(), p.value.cols()) = p.value.template cast<float>();
    records.push_back(std::move(r));
  }
  return records;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<Scalar>& store) {
  write_checkpoint(path, checkpoint_records(store));
}

template <typename Scalar>
void load_checkpoint(const std::filesystem::path& path, ParameterStore<Scalar>& store) {
  std::map<std::string, const CheckpointRecord*> by_name;
  const auto records = read_checkpoint(path);
  for (const auto& r : records) {
    if (!store.find(r.name)) throw DataError("checkpoint parameter '" + r.name + "' is not part of the model");
    by_name[r.name] = &r;
  }
  for (auto& p : store.all()) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("checkpoint lacks parameter '" + p.name + "'");
    const CheckpointRecord& r = *it->second;
    if (r.rows != p.value.rows() || r.cols != p.value.cols()) {
      throw DataError("parameter '" + p.name + "' has shape " + std::to_string(r.rows) + "x" + std::to_string(r.cols) +
                      " in the checkpoint, model expects " + std::to_string(p.value.rows()) + "x" +
                      std::to_string(p.value.cols()));
    }
    p.value = Eigen::Map<const Matrix<float>>(r.values.data(), r.rows, r.cols).template cast<Scalar>();
  }
}

#define S3NET_INSTANTIATE(S)                                                                      \
  template std::vector<CheckpointRecord> checkpoint_records(const ParameterStore<S>&);           \
  template void save_checkpoint(const std::filesystem::path&, const ParameterStore<S>&);         \
  template void load_checkpoint(const std::filesystem::path&, ParameterStore<S>&);

S3NET_INSTANTIATE(float)
S3NET_INSTANTIATE(double)
#undef S3NET_INSTANTIATE

}  // namespace s3net
