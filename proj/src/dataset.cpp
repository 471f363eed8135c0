#include "s3net/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string_view>

namespace s3net {

static_assert(std::endian::native == std::endian::little, "scan and label files are read with native byte order");

namespace {

std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const void* data, std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

Scan read_scan(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_bytes(path);
  if (bytes.empty() || bytes.size() % 16 != 0) {
    throw DataError(path.string() + ": " + std::to_string(bytes.size()) + " bytes is not a positive multiple of 16");
  }
  Scan scan;
  scan.points.resize(static_cast<Eigen::Index>(bytes.size() / 16), 4);
  std::memcpy(scan.points.data(), bytes.data(), bytes.size());
  if (!scan.points.allFinite()) throw DataError(path.string() + ": non-finite point value");
  return scan;
}

void write_scan(const std::filesystem::path& path, const Scan& scan) {
  write_bytes(path, scan.points.data(), static_cast<std::size_t>(scan.points.size()) * sizeof(float));
}

std::vector<std::uint32_t> read_raw_labels(const std::filesystem::path& path, long long expected_count) {
  const std::vector<char> bytes = read_bytes(path);
  if (bytes.size() % 4 != 0) throw DataError(path.string() + ": " + std::to_string(bytes.size()) + " bytes is not a multiple of 4");
  const auto n = static_cast<long long>(bytes.size() / 4);
  if (expected_count >= 0 && n != expected_count) {
    throw DataError(path.string() + ": " + std::to_string(bytes.size()) + " bytes hold " + std::to_string(n) +
                    " labels, scan has " + std::to_string(expected_count) + " points (" +
                    std::to_string(expected_count * 16) + " bytes)");
  }
  std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
  std::memcpy(labels.data(), bytes.data(), bytes.size());
  return labels;
}

void write_raw_labels(const std::filesystem::path& path, std::span<const std::uint32_t> labels) {
  write_bytes(path, labels.data(), labels.size_bytes());
}

std::vector<std::uint32_t> read_labels(const std::filesystem::path& path, long long expected_count) {
  std::vector<std::uint32_t> labels = read_raw_labels(path, expected_count);
  for (auto& l : labels) l = semantic_id(l);
  return labels;
}

LabelMap LabelMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label map " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

LabelMap LabelMap::parse(const std::string& json_text) {
  LabelMap map;
  try {
    const auto doc = nlohmann::json::parse(json_text);
    map.class_names_ = doc.at("classes").get<std::vector<std::string>>();
    for (const auto& [raw, train] : doc.at("learning_map").items()) {
      const int id = train.get<int>();
      if (id != kIgnoreLabel && (id < 0 || id >= map.class_count())) {
        throw DataError("learning_map entry " + raw + " -> " + std::to_string(id) + " is out of range");
      }
      map.learning_map_[static_cast<std::uint32_t>(std::stoul(raw))] = id;
    }
    if (doc.contains("learning_map_inv")) {
      for (const auto& [train, raw] : doc.at("learning_map_inv").items()) {
        map.inverse_[std::stoi(train)] = raw.get<std::uint32_t>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed label map: ") + e.what());
  }
  return map;
}

std::vector<int> LabelMap::remap(std::span<const std::uint32_t> semantic_ids) const {
  std::vector<int> out(semantic_ids.size());
  std::map<std::uint32_t, std::size_t> unknown;
  for (std::size_t i = 0; i < semantic_ids.size(); ++i) {
    const auto it = learning_map_.find(semantic_ids[i]);
    if (it == learning_map_.end()) {
      ++unknown[semantic_ids[i]];
      continue;
    }
    out[i] = it->second;
  }
  if (!unknown.empty()) {
    std::string ids;
    for (const auto& [id, n] : unknown) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
    throw DataError("unknown raw label id(s): " + ids);
  }
  return out;
}

std::uint32_t LabelMap::to_raw(int train_id) const {
  const auto it = inverse_.find(train_id);
  return it == inverse_.end() ? 0u : it->second;
}

std::vector<std::uint64_t> count_classes(std::span<const int> train_ids, int class_count) {
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(class_count), 0);
  for (int id : train_ids) {
    if (id == kIgnoreLabel) continue;
    if (id < 0 || id >= class_count) throw DataError("train id " + std::to_string(id) + " out of range");
    ++counts[static_cast<std::size_t>(id)];
  }
  return counts;
}

void write_frequency_manifest(const std::filesystem::path& path, std::span<const std::uint64_t> counts,
                              const std::vector<std::string>& class_names) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  out << "# class_id count frequency name\n";
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double f = total == 0 ? 0.0 : static_cast<double>(counts[c]) / static_cast<double>(total);
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, f).ptr;  // shortest round-trip form
    out << c << ' ' << counts[c] << ' ' << std::string_view(buf, end) << ' ' << (c < class_names.size() ? class_names[c] : "class" + std::to_string(c))
        << '\n';
  }
}

std::vector<std::uint64_t> read_frequency_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open frequency manifest " + path.string());
  std::vector<std::uint64_t> counts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::size_t cls = 0;
    std::uint64_t count = 0;
    if (!(fields >> cls >> count)) throw DataError("malformed manifest line: " + line);
    if (cls != counts.size()) throw DataError("manifest class ids must be consecutive from 0");
    counts.push_back(count);
  }
  return counts;
}

std::vector<ScanEntry> list_scans(const std::filesystem::path& root, const std::vector<std::string>& sequences) {
  std::vector<ScanEntry> entries;
  for (const auto& seq : sequences) {
    const auto dir = root / "sequences" / seq;
    const auto velodyne = dir / "velodyne";
    if (!std::filesystem::is_directory(velodyne)) throw DataError("missing scan directory " + velodyne.string());
    std::vector<ScanEntry> found;
    for (const auto& file : std::filesystem::directory_iterator(velodyne)) {
      if (file.path().extension() != ".bin") continue;
      const std::string frame = file.path().stem().string();
      found.push_back({file.path(), dir / "labels" / (frame + ".label"), seq, frame});
    }
    std::sort(found.begin(), found.end(), [](const ScanEntry& a, const ScanEntry& b) { return a.frame < b.frame; });
    entries.insert(entries.end(), found.begin(), found.end());
  }
  return entries;
}

}  // namespace s3net
