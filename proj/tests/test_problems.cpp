#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "plasticity/problems.hpp"

namespace {

using namespace plasticity;
namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("plasticity_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Images whose pixels are exact multiples of 1/255, so byte encoding is lossless.
Tensor byte_images(const Shape& shape, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor t(shape);
  for (double& v : t.values()) v = static_cast<double>(rng.below(256)) / 255.0;
  return t;
}

// Hand-assembled big-endian IDX bytes, independent of the encoder.
std::vector<std::uint8_t> handmade_idx_images() {
  return {0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
          0,    51,   102,  153,  204, 255, 255, 0, 0, 0, 0, 255};
}

TEST(Idx, ParsesHandAssembledImages) {
  const IdxContents c = parse_idx(handmade_idx_images());
  ASSERT_TRUE(c.is_images);
  EXPECT_EQ(c.images.shape(), (Shape{2, 2, 3}));
  EXPECT_DOUBLE_EQ(c.images[1], 0.2);
  EXPECT_DOUBLE_EQ(c.images[5], 1.0);
  EXPECT_DOUBLE_EQ(c.images[11], 1.0);
}

TEST(Idx, ParsesHandAssembledLabels) {
  const std::vector<std::uint8_t> bytes{0, 0, 8, 1, 0, 0, 0, 4, 7, 0, 9, 3};
  const IdxContents c = parse_idx(bytes);
  ASSERT_FALSE(c.is_images);
  EXPECT_EQ(c.labels, (std::vector<int>{7, 0, 9, 3}));
}

TEST(Idx, RoundTripThroughFiles) {
  const fs::path dir = scratch_dir("idx");
  const Tensor images = byte_images({5, 28, 28}, 1);
  const std::vector<int> labels{0, 9, 4, 4, 1};
  write_file_bytes(dir / "img.idx", encode_idx_images(images));
  write_file_bytes(dir / "lab.idx", encode_idx_labels(labels));
  const Dataset d = load_mnist(dir / "img.idx", dir / "lab.idx");
  EXPECT_EQ(d.images, images);
  EXPECT_EQ(d.labels, labels);
  fs::remove_all(dir);
}

TEST(Idx, RejectsWrongMagicWithHexValue) {
  auto bytes = handmade_idx_images();
  bytes[3] = 0x02;
  try {
    parse_idx(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("0x00000802"), std::string::npos) << e.what();
  }
}

TEST(Idx, RejectsTruncation) {
  auto bytes = handmade_idx_images();
  bytes.pop_back();
  EXPECT_THROW(parse_idx(bytes), FormatError);
  EXPECT_THROW(parse_idx(std::vector<std::uint8_t>{0, 0, 8, 3, 0, 0}), FormatError);
  EXPECT_THROW(parse_idx(std::vector<std::uint8_t>{0, 0}), FormatError);
}

TEST(Idx, MissingFileIsIoError) {
  EXPECT_THROW(load_idx("/nonexistent/plasticity/file.idx"), IoError);
}

TEST(Idx, MismatchedCountsRejected) {
  const fs::path dir = scratch_dir("idx_mismatch");
  write_file_bytes(dir / "img.idx", encode_idx_images(byte_images({3, 2, 2}, 1)));
  write_file_bytes(dir / "lab.idx", encode_idx_labels(std::vector<int>{1, 2}));
  EXPECT_THROW(load_mnist(dir / "img.idx", dir / "lab.idx"), FormatError);
  fs::remove_all(dir);
}

TEST(Cifar, RoundTripThroughFile) {
  const fs::path dir = scratch_dir("cifar");
  const Dataset d{byte_images({3, 3, 32, 32}, 2), {6, 0, 9}};
  write_file_bytes(dir / "batch.bin", encode_cifar10(d));
  EXPECT_EQ(fs::file_size(dir / "batch.bin"), 3u * 3073u);
  EXPECT_EQ(load_cifar10_bin(dir / "batch.bin"), d);
  fs::remove_all(dir);
}

TEST(Cifar, ChannelPlanesFollowLabelByte) {
  std::vector<std::uint8_t> rec(3073, 0);
  rec[0] = 4;
  rec[1] = 255;            // R(0,0)
  rec[1 + 1024 + 33] = 51;  // G(1,1)
  const Dataset d = parse_cifar10(rec);
  EXPECT_EQ(d.labels[0], 4);
  EXPECT_DOUBLE_EQ(d.images[0], 1.0);
  EXPECT_DOUBLE_EQ(d.images[1024 + 33], 0.2);
}

TEST(Cifar, RejectsBadLengthAndLabels) {
  EXPECT_THROW(parse_cifar10(std::vector<std::uint8_t>(3072)), FormatError);
  EXPECT_THROW(parse_cifar10(std::vector<std::uint8_t>{}), FormatError);
  std::vector<std::uint8_t> rec(3073, 0);
  rec[0] = 10;
  EXPECT_THROW(parse_cifar10(rec), FormatError);
}

TEST(Datasets, ConcatenateSelectSubsample) {
  const Dataset a{byte_images({2, 3}, 1), {0, 1}}, b{byte_images({3, 3}, 2), {2, 3, 4}};
  const Dataset all = concatenate({a, b});
  EXPECT_EQ(all.size(), 5u);
  EXPECT_EQ(all.labels, (std::vector<int>{0, 1, 2, 3, 4}));
  const std::vector<std::size_t> idx{4, 0};
  const Dataset s = select(all, idx);
  EXPECT_EQ(s.labels, (std::vector<int>{4, 0}));
  EXPECT_EQ(s.images[0], b.images[6]);
  RngStream rng(0);
  const Dataset sub = subsample(all, 3, rng);
  std::set<int> distinct(sub.labels.begin(), sub.labels.end());
  EXPECT_EQ(distinct.size(), 3u);
  EXPECT_THROW(subsample(all, 6, rng), ArgumentError);
  EXPECT_THROW(concatenate({a, Dataset{byte_images({1, 4}, 3), {0}}}), DimensionError);
}

TEST(Datasets, PermutationMovesFeaturesAndKeepsLabels) {
  const Dataset d{Tensor({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}), {1, 2}};
  const std::vector<std::size_t> perm{2, 0, 1};
  const Dataset p = apply_permutation(d, perm);
  EXPECT_EQ(p.images, Tensor({2, 3}, {0.3, 0.1, 0.2, 0.6, 0.4, 0.5}));
  EXPECT_EQ(p.labels, d.labels);
  EXPECT_THROW(apply_permutation(d, std::vector<std::size_t>{0, 1}), DimensionError);
}

TEST(Datasets, ValidateCatchesBadContent) {
  EXPECT_THROW((Dataset{Tensor({1, 2}, {0.5, 1.5}), {0}}.validate()), FormatError);
  EXPECT_THROW((Dataset{Tensor({1, 2}), {10}}.validate()), FormatError);
  EXPECT_THROW((Dataset{Tensor({2, 2}), {0}}.validate()), DimensionError);
}

TEST(Synthetic, DatasetIsDeterministicAndInRange) {
  const Dataset a = make_synthetic_dataset(16, 4, 50, 0.5, RngStream(3));
  EXPECT_EQ(a, make_synthetic_dataset(16, 4, 50, 0.5, RngStream(3)));
  EXPECT_NE(a, make_synthetic_dataset(16, 4, 50, 0.5, RngStream(4)));
  EXPECT_NO_THROW(a.validate(4));
  EXPECT_EQ(a.images.shape(), (Shape{50, 16}));
}

TEST(Synthetic, ZeroSpreadSamplesEqualTheirPrototype) {
  const Dataset d = make_synthetic_dataset(8, 3, 60, 0.0, RngStream(1));
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = i + 1; j < d.size(); ++j) {
      if (d.labels[i] != d.labels[j]) continue;
      for (std::size_t f = 0; f < 8; ++f) EXPECT_EQ(d.images.at(i, f), d.images.at(j, f));
    }
  }
}

TEST(Streams, PermutedTasksArePureFunctionsOfSeedAndIndex) {
  const TaskStream s = make_synthetic_stream(12, 3, 40, 5, 10, 77);
  const Task t2a = make_task(s, 2), t2b = make_task(s, 2), t3 = make_task(s, 3);
  EXPECT_EQ(t2a.data, t2b.data);
  EXPECT_NE(t2a.data.images, t3.data.images);
  EXPECT_EQ(t2a.data.labels, s.base->labels);
  EXPECT_EQ(t2a.start_step, 20u);
  // Each task's images are a feature permutation of the base images.
  const auto perm = s.permutation(2);
  EXPECT_EQ(t2a.data, apply_permutation(*s.base, perm));
  EXPECT_THROW(make_task(s, 5), ArgumentError);
}

TEST(Streams, RandomLabelTasksKeepImagesAndRedrawLabels) {
  SyntheticOptions opts;
  opts.transform = TaskTransform::RandomLabels;
  const TaskStream s = make_synthetic_stream(12, 5, 200, 3, 10, 77, opts);
  const Task t0 = make_task(s, 0), t1 = make_task(s, 1);
  EXPECT_EQ(t0.data.images, s.base->images);
  EXPECT_EQ(t1.data.images, s.base->images);
  EXPECT_NE(t0.data.labels, t1.data.labels);
  for (int l : t1.data.labels) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, 5);
  }
}

TEST(Batching, EpochCoversEveryIndexOnceWithShortFinalBatch) {
  const TaskStream s = make_synthetic_stream(4, 3, 37, 1, 12, 5, {}, 16);
  const Task t = make_task(s, 0);
  BatchSampler sampler(t);
  std::vector<std::size_t> sizes;
  std::multiset<std::vector<double>> seen;
  for (std::size_t step = 0; step < 3; ++step) {
    const Batch b = sampler.batch(step);
    sizes.push_back(b.labels.size());
    for (std::size_t r = 0; r < b.labels.size(); ++r) {
      seen.insert(std::vector<double>(b.images.data() + r * 4, b.images.data() + (r + 1) * 4));
    }
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{16, 16, 5}));
  std::multiset<std::vector<double>> all;
  for (std::size_t r = 0; r < 37; ++r) {
    all.insert(std::vector<double>(t.data.images.data() + r * 4, t.data.images.data() + (r + 1) * 4));
  }
  EXPECT_EQ(seen, all);
}

TEST(Batching, SamplerMatchesRandomAccessAndReshufflesPerEpoch) {
  const TaskStream s = make_synthetic_stream(4, 3, 32, 1, 8, 5, {}, 16);
  const Task t = make_task(s, 0);
  BatchSampler sampler(t);
  for (std::size_t step = 0; step < 8; ++step) {
    const Batch a = sampler.batch(step), b = next_batch(t, step);
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.labels, b.labels);
  }
  EXPECT_NE(next_batch(t, 0).images, next_batch(t, 2).images);
  EXPECT_THROW(next_batch(t, 8), ArgumentError);
}

TEST(Files, DigestIsStable) {
  const std::vector<std::uint8_t> bytes{'a'};
  EXPECT_EQ(fnv1a_digest(bytes), 0xAF63DC4C8601EC8CULL);
  EXPECT_EQ(fnv1a_digest({}), 0xCBF29CE484222325ULL);
}

}  // namespace
