#include "s3net/dataset.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

using namespace s3net;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / "s3net_tests" / (std::string(info->test_suite_name()) + "." + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_floats(const fs::path& p, const std::vector<float>& v) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

LabelMap kitti() { return LabelMap::load(fs::path(S3NET_SOURCE_DIR) / "config" / "semantic_kitti.json"); }

}  // namespace

TEST(ScanIo, SixteenBytesIsOnePoint) {
  const fs::path p = scratch_dir() / "one.bin";
  write_floats(p, {1.0f, 2.0f, 3.0f, 0.5f});
  const Scan s = read_scan(p);
  ASSERT_EQ(s.size(), 1);
  EXPECT_EQ(s.positions().row(0), Eigen::RowVector3d(1, 2, 3));
  EXPECT_EQ(s.remission()(0), 0.5);
}

TEST(ScanIo, RoundTripIsBitIdentical) {
  const fs::path dir = scratch_dir();
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.0f, 20.0f);
  Scan s;
  s.points.resize(500, 4);
  for (Eigen::Index r = 0; r < 500; ++r)
    for (int c = 0; c < 4; ++c) s.points(r, c) = n(rng);
  write_scan(dir / "a.bin", s);
  const Scan back = read_scan(dir / "a.bin");
  EXPECT_EQ(std::memcmp(back.points.data(), s.points.data(), 500 * 16), 0);
  write_scan(dir / "b.bin", back);
  EXPECT_EQ(file_bytes(dir / "a.bin"), file_bytes(dir / "b.bin"));
}

TEST(ScanIo, MalformedFilesAreRejected) {
  const fs::path dir = scratch_dir();
  write_floats(dir / "short.bin", {1.0f, 2.0f, 3.0f});
  EXPECT_THROW(read_scan(dir / "short.bin"), DataError);
  write_floats(dir / "empty.bin", {});
  EXPECT_THROW(read_scan(dir / "empty.bin"), DataError);
  write_floats(dir / "nan.bin", {1.0f, std::nanf(""), 0.0f, 0.0f});
  EXPECT_THROW(read_scan(dir / "nan.bin"), DataError);
  EXPECT_THROW(read_scan(dir / "missing.bin"), DataError);
}

TEST(LabelIo, InstanceBitsAreStripped) {
  EXPECT_EQ(semantic_id(0x00010028u), 0x0028u);
  const fs::path p = scratch_dir() / "l.label";
  const std::vector<std::uint32_t> raw{0x00010028u, 0x00000032u, 0xFFFF00FCu};
  write_raw_labels(p, raw);
  EXPECT_EQ(read_raw_labels(p), raw);
  EXPECT_EQ(read_labels(p), (std::vector<std::uint32_t>{40, 50, 252}));
}

TEST(LabelIo, CountMismatchNamesBothSizes) {
  const fs::path p = scratch_dir() / "l.label";
  write_raw_labels(p, std::vector<std::uint32_t>(3, 40));
  try {
    read_labels(p, 4);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("12 bytes"), std::string::npos) << msg;
    EXPECT_NE(msg.find("64 bytes"), std::string::npos) << msg;
  }
}

TEST(LabelMapTest, KittiMapping) {
  const LabelMap map = kitti();
  EXPECT_EQ(map.class_count(), 19);
  EXPECT_EQ(map.class_names().front(), "car");
  EXPECT_EQ(map.class_names().back(), "traffic-sign");
  const std::vector<std::uint32_t> ids{0, 1, 10, 252, 30, 254, 40, 81};
  EXPECT_EQ(map.remap(ids), (std::vector<int>{kIgnoreLabel, kIgnoreLabel, 0, 0, 5, 5, 8, 18}));
  EXPECT_EQ(map.to_raw(0), 10u);
  EXPECT_EQ(map.to_raw(18), 81u);
  EXPECT_EQ(map.to_raw(kIgnoreLabel), 0u);
}

TEST(LabelMapTest, UnknownIdsAreListed) {
  const std::vector<std::uint32_t> ids{10, 7, 7, 1234};
  try {
    kitti().remap(ids);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("7, 1234"), std::string::npos) << e.what();
  }
}

TEST(LabelMapTest, MalformedMapsAreRejected) {
  EXPECT_THROW(LabelMap::parse("{"), DataError);
  EXPECT_THROW(LabelMap::parse(R"({"classes": ["a"], "learning_map": {"5": 3}})"), DataError);
  EXPECT_THROW(LabelMap::parse(R"({"learning_map": {}})"), DataError);
}

TEST(Histogram, MatchesTableRecount) {
  const LabelMap map = kitti();
  const std::vector<std::uint32_t> known{0, 1, 10, 11, 13, 15, 16, 18, 20, 30, 31, 32, 40, 44, 48, 49, 50, 51, 52,
                                         60, 70, 71, 72, 80, 81, 99, 252, 253, 254, 255, 256, 257, 258, 259};
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> pick(0, known.size() - 1);
  std::uniform_int_distribution<std::uint32_t> instance(0, 40);
  std::vector<std::uint32_t> raw(20000);
  for (auto& r : raw) r = (instance(rng) << 16) | known[pick(rng)];
  const fs::path p = scratch_dir() / "h.label";
  write_raw_labels(p, raw);

  const auto counts = count_classes(map.remap(read_labels(p, 20000)), 19);
  // independent table: train id by semantic id
  std::map<std::uint32_t, int> table{{0, -1},  {1, -1},  {10, 0},  {11, 1},  {13, 4},  {15, 2},  {16, 4},
                                     {18, 3},  {20, 4},  {30, 5},  {31, 6},  {32, 7},  {40, 8},  {44, 9},
                                     {48, 10}, {49, 11}, {50, 12}, {51, 13}, {52, -1}, {60, 8},  {70, 14},
                                     {71, 15}, {72, 16}, {80, 17}, {81, 18}, {99, -1}, {252, 0}, {253, 6},
                                     {254, 5}, {255, 7}, {256, 4}, {257, 4}, {258, 3}, {259, 4}};
  std::vector<std::uint64_t> oracle(19, 0);
  for (auto r : raw) {
    const int id = table.at(r & 0xFFFFu);
    if (id >= 0) ++oracle[static_cast<std::size_t>(id)];
  }
  EXPECT_EQ(counts, oracle);
}

TEST(FrequencyManifest, RoundTrip) {
  const fs::path p = scratch_dir() / "freq.txt";
  const std::vector<std::uint64_t> counts{30, 0, 70};
  write_frequency_manifest(p, counts, {"a", "b", "c"});
  EXPECT_EQ(read_frequency_manifest(p), counts);
  const std::string text = file_bytes(p);
  EXPECT_NE(text.find("2 70 0.7"), std::string::npos) << text;

  std::ofstream(p) << "0 5 1 a\n2 3 0 b\n";
  EXPECT_THROW(read_frequency_manifest(p), DataError);
}

TEST(ListScans, SortedFramesPerSequence) {
  const fs::path root = scratch_dir();
  for (const char* seq : {"00", "03"}) {
    for (const char* frame : {"000002", "000000", "000001"}) {
      const fs::path dir = root / "sequences" / seq / "velodyne";
      fs::create_directories(dir);
      std::ofstream(dir / (std::string(frame) + ".bin"));
    }
  }
  const auto entries = list_scans(root, {"03", "00"});
  ASSERT_EQ(entries.size(), 6u);
  EXPECT_EQ(entries[0].sequence, "03");
  EXPECT_EQ(entries[0].frame, "000000");
  EXPECT_EQ(entries[2].frame, "000002");
  EXPECT_EQ(entries[3].sequence, "00");
  EXPECT_EQ(entries[0].labels, root / "sequences" / "03" / "labels" / "000000.label");
  EXPECT_THROW(list_scans(root, {"08"}), DataError);
}
