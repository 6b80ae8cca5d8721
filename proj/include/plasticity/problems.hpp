#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "plasticity/errors.hpp"
#include "plasticity/rng.hpp"
#include "plasticity/tensor.hpp"

namespace plasticity {

/// Images in [0,1], batch-major, with integer class labels.
struct Dataset {
  Tensor images;  // N × sample_shape
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }

  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  std::size_t sample_volume() const { return size() ? images.size() / size() : 0; }

  void validate(std::size_t num_classes = 10) const {
    if (labels.empty()) throw FormatError("dataset is empty");
    if (images.rank() < 2 || images.dim(0) != labels.size()) {
      throw DimensionError("dataset images " + shape_string(images.shape()) + " vs " +
                           std::to_string(labels.size()) + " labels");
    }
    for (int l : labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
        throw FormatError("dataset label " + std::to_string(l) + " out of range");
      }
    }
    for (double v : images.values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw FormatError("dataset pixel outside [0,1]");
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// File formats

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

/// 64-bit FNV-1a digest, used to log which dataset files a run consumed.
inline std::uint64_t fnv1a_digest(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Parsed IDX payload: either an image stack (N×rows×cols in [0,1]) or a label vector.
struct IdxContents {
  bool is_images = false;
  Tensor images;
  std::vector<int> labels;
};

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream s;
  s << "0x" << std::hex;
  s.width(8);
  s.fill('0');
  s << v;
  return s.str();
}

inline std::uint8_t to_byte(double v) {
  const double scaled = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(scaled + 0.5);
}

}  // namespace detail

inline IdxContents parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("IDX: file shorter than its magic number");
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  std::size_t ndim = 0;
  if (magic == kIdxImagesMagic) {
    ndim = 3;
  } else if (magic == kIdxLabelsMagic) {
    ndim = 1;
  } else {
    throw FormatError("IDX: unsupported magic " + detail::hex32(magic));
  }
  const std::size_t header = 4 + 4 * ndim;
  if (bytes.size() < header) throw FormatError("IDX: truncated header");
  Shape dims;
  for (std::size_t d = 0; d < ndim; ++d) dims.push_back(detail::read_be32(bytes, 4 + 4 * d));
  const std::size_t payload = shape_volume(dims);
  if (bytes.size() - header < payload) {
    throw FormatError("IDX: truncated payload, expected " + std::to_string(payload) + " bytes, found " +
                      std::to_string(bytes.size() - header));
  }
  IdxContents out;
  out.is_images = ndim == 3;
  if (out.is_images) {
    out.images = Tensor(dims);
    for (std::size_t i = 0; i < payload; ++i) out.images[i] = bytes[header + i] / 255.0;
  } else {
    out.labels.resize(payload);
    for (std::size_t i = 0; i < payload; ++i) out.labels[i] = bytes[header + i];
  }
  return out;
}

inline IdxContents load_idx(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_idx(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline std::vector<std::uint8_t> encode_idx_images(const Tensor& images) {
  if (images.rank() != 3) throw DimensionError("IDX images must be N×rows×cols");
  std::vector<std::uint8_t> out;
  detail::append_be32(out, kIdxImagesMagic);
  for (std::size_t d = 0; d < 3; ++d) detail::append_be32(out, static_cast<std::uint32_t>(images.dim(d)));
  for (double v : images.values()) out.push_back(detail::to_byte(v));
  return out;
}

inline std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels) {
  std::vector<std::uint8_t> out;
  detail::append_be32(out, kIdxLabelsMagic);
  detail::append_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) out.push_back(static_cast<std::uint8_t>(l));
  return out;
}

/// MNIST image and label files combined; images keep their N×28×28 shape.
inline Dataset load_mnist(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  IdxContents img = load_idx(images_path);
  IdxContents lab = load_idx(labels_path);
  if (!img.is_images) throw FormatError(images_path.string() + ": expected an IDX image file");
  if (lab.is_images) throw FormatError(labels_path.string() + ": expected an IDX label file");
  if (img.images.dim(0) != lab.labels.size()) {
    throw FormatError("MNIST: " + std::to_string(img.images.dim(0)) + " images but " +
                      std::to_string(lab.labels.size()) + " labels");
  }
  Dataset d{std::move(img.images), std::move(lab.labels)};
  d.validate();
  return d;
}

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// CIFAR-10 binary records: one label byte then 1024 R, 1024 G, 1024 B bytes.
inline Dataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10: length " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  if (n == 0) throw FormatError("CIFAR-10: no records");
  Dataset d{Tensor({n, 3, 32, 32}), std::vector<int>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) throw FormatError("CIFAR-10: label " + std::to_string(rec[0]) + " in record " + std::to_string(r));
    d.labels[r] = rec[0];
    double* img = d.images.data() + r * 3072;
    for (std::size_t i = 0; i < 3072; ++i) img[i] = rec[1 + i] / 255.0;
  }
  return d;
}

inline Dataset load_cifar10_bin(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_cifar10(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline std::vector<std::uint8_t> encode_cifar10(const Dataset& d) {
  if (d.images.rank() != 4 || d.images.dim(1) != 3 || d.images.dim(2) != 32 || d.images.dim(3) != 32) {
    throw DimensionError("CIFAR-10 writer expects N×3×32×32 images, got " + shape_string(d.images.shape()));
  }
  std::vector<std::uint8_t> out;
  out.reserve(d.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < d.size(); ++r) {
    out.push_back(static_cast<std::uint8_t>(d.labels[r]));
    const double* img = d.images.data() + r * 3072;
    for (std::size_t i = 0; i < 3072; ++i) out.push_back(detail::to_byte(img[i]));
  }
  return out;
}

/// Concatenates datasets with identical sample shapes.
inline Dataset concatenate(const std::vector<Dataset>& parts) {
  if (parts.empty()) throw ArgumentError("concatenate: no datasets");
  Shape shape = parts.front().images.shape();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.sample_shape() != parts.front().sample_shape()) throw DimensionError("concatenate: sample shapes differ");
    n += p.size();
  }
  shape[0] = n;
  Dataset out{Tensor(shape), {}};
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.images.values().begin(), p.images.values().end(), out.images.data() + offset);
    offset += p.images.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling and task construction

/// Dataset restricted to `indices`, in that order.
inline Dataset select(const Dataset& d, std::span<const std::size_t> indices) {
  Shape shape = d.images.shape();
  shape[0] = indices.size();
  const std::size_t vol = d.sample_volume();
  Dataset out{Tensor(shape), std::vector<int>(indices.size())};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const double* src = d.images.data() + indices[i] * vol;
    std::copy(src, src + vol, out.images.data() + i * vol);
    out.labels[i] = d.labels[indices[i]];
  }
  return out;
}

/// n distinct samples drawn without replacement, in rng order.
inline Dataset subsample(const Dataset& d, std::size_t n, RngStream& rng) {
  if (n > d.size()) {
    throw ArgumentError("subsample: requested " + std::to_string(n) + " of " + std::to_string(d.size()) + " samples");
  }
  std::vector<std::size_t> perm = rng.permutation(d.size());
  perm.resize(n);
  return select(d, perm);
}

/// Every sample's features rearranged so that output feature j is input feature perm[j].
inline Dataset apply_permutation(const Dataset& d, std::span<const std::size_t> perm) {
  const std::size_t vol = d.sample_volume();
  if (perm.size() != vol) {
    throw DimensionError("apply_permutation: permutation of length " + std::to_string(perm.size()) +
                         " for samples of " + std::to_string(vol) + " features");
  }
  Dataset out{Tensor(d.images.shape()), d.labels};
  for (std::size_t s = 0; s < d.size(); ++s) {
    const double* src = d.images.data() + s * vol;
    double* dst = out.images.data() + s * vol;
    for (std::size_t j = 0; j < vol; ++j) dst[j] = src[perm[j]];
  }
  return out;
}

enum class TaskTransform { PermuteInputs, RandomLabels };

/// Lazy sequence of K tasks over a fixed base dataset. Task i is a pure
/// function of (seed, i); batches within a task follow a fresh seeded shuffle
/// every epoch.
struct TaskStream {
  TaskTransform transform = TaskTransform::PermuteInputs;
  std::shared_ptr<const Dataset> base;
  std::size_t num_tasks = 0;       // K
  std::size_t steps_per_task = 0;  // M
  std::size_t batch_size = 16;     // B
  std::size_t num_classes = 10;
  std::uint64_t seed = 0;

  std::size_t batches_per_epoch() const { return (base->size() + batch_size - 1) / batch_size; }
  std::size_t total_steps() const { return num_tasks * steps_per_task; }

  RngStream task_rng(std::size_t i) const { return RngStream(seed).split("task").split(i); }
  RngStream order_rng(std::size_t i) const { return RngStream(seed).split("batch").split(i); }

  std::vector<std::size_t> permutation(std::size_t i) const {
    RngStream rng = task_rng(i);
    return rng.permutation(base->sample_volume());
  }

  std::vector<int> random_labels(std::size_t i) const {
    RngStream rng = task_rng(i);
    std::vector<int> labels(base->size());
    for (int& l : labels) l = static_cast<int>(rng.below(num_classes));
    return labels;
  }
};

struct Task {
  std::size_t index = 0;
  std::size_t start_step = 0;
  std::size_t steps = 0;
  std::size_t batch_size = 16;
  Dataset data;
  RngStream order_rng;
};

inline Task make_task(const TaskStream& stream, std::size_t i) {
  if (i >= stream.num_tasks) {
    throw ArgumentError("make_task: index " + std::to_string(i) + " outside [0, " +
                        std::to_string(stream.num_tasks) + ")");
  }
  Task t;
  t.index = i;
  t.start_step = i * stream.steps_per_task;
  t.steps = stream.steps_per_task;
  t.batch_size = stream.batch_size;
  t.order_rng = stream.order_rng(i);
  if (stream.transform == TaskTransform::PermuteInputs) {
    t.data = apply_permutation(*stream.base, stream.permutation(i));
  } else {
    t.data = *stream.base;
    t.data.labels = stream.random_labels(i);
  }
  return t;
}

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

inline std::vector<std::size_t> epoch_order(const RngStream& order_root, std::size_t epoch, std::size_t n) {
  RngStream rng = order_root.split(epoch);
  return rng.permutation(n);
}

namespace detail {

inline Batch gather_batch(const Dataset& d, std::span<const std::size_t> order, std::size_t begin, std::size_t end) {
  Dataset sub = select(d, order.subspan(begin, end - begin));
  return Batch{std::move(sub.images), std::move(sub.labels)};
}

}  // namespace detail

/// Batch `step` of the task: epoch step / ceil(N/B), slot step % ceil(N/B) of
/// that epoch's shuffled order. The final slot of an epoch may be short.
inline Batch next_batch(const Task& task, std::size_t step, const RngStream& order_root) {
  if (step >= task.steps) {
    throw ArgumentError("next_batch: step " + std::to_string(step) + " outside task of " +
                        std::to_string(task.steps) + " steps");
  }
  const std::size_t n = task.data.size();
  const std::size_t per_epoch = (n + task.batch_size - 1) / task.batch_size;
  const std::size_t slot = step % per_epoch;
  const std::vector<std::size_t> order = epoch_order(order_root, step / per_epoch, n);
  const std::size_t begin = slot * task.batch_size;
  return detail::gather_batch(task.data, order, begin, std::min(n, begin + task.batch_size));
}

inline Batch next_batch(const Task& task, std::size_t step) { return next_batch(task, step, task.order_rng); }

/// Sequential batch source for one task that reshuffles once per epoch.
class BatchSampler {
 public:
  explicit BatchSampler(const Task& task) : task_(&task) {}

  Batch batch(std::size_t step) {
    if (step >= task_->steps) {
      throw ArgumentError("BatchSampler: step " + std::to_string(step) + " outside task");
    }
    const std::size_t n = task_->data.size();
    const std::size_t per_epoch = (n + task_->batch_size - 1) / task_->batch_size;
    const std::size_t epoch = step / per_epoch;
    if (epoch != epoch_ || order_.empty()) {
      order_ = epoch_order(task_->order_rng, epoch, n);
      epoch_ = epoch;
    }
    const std::size_t begin = (step % per_epoch) * task_->batch_size;
    return detail::gather_batch(task_->data, order_, begin, std::min(n, begin + task_->batch_size));
  }

 private:
  const Task* task_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> order_;
};

/// Class-prototype images: each class owns a uniform [0,1]^width prototype and
/// samples are prototype + uniform(-spread/2, spread/2) jitter clamped to [0,1].
/// Labels are uniform over classes.
inline Dataset make_synthetic_dataset(std::size_t width, std::size_t classes, std::size_t n, double spread,
                                      RngStream rng) {
  if (width == 0 || classes == 0 || n == 0) throw ArgumentError("synthetic dataset sizes must be positive");
  RngStream proto_rng = rng.split("prototypes");
  RngStream sample_rng = rng.split("samples");
  Tensor prototypes = sample_uniform(proto_rng, 0.0, 1.0, {classes, width});
  Dataset d{Tensor({n, width}), std::vector<int>(n)};
  for (std::size_t s = 0; s < n; ++s) {
    const auto c = static_cast<std::size_t>(sample_rng.below(classes));
    d.labels[s] = static_cast<int>(c);
    for (std::size_t j = 0; j < width; ++j) {
      double v = prototypes.at(c, j);
      if (spread > 0.0) v += spread * (sample_rng.uniform01() - 0.5);
      d.images.at(s, j) = std::clamp(v, 0.0, 1.0);
    }
  }
  return d;
}

struct SyntheticOptions {
  double spread = 0.5;
  TaskTransform transform = TaskTransform::PermuteInputs;
};

/// Desk-scale stand-in for the image benchmarks.
inline TaskStream make_synthetic_stream(std::size_t width, std::size_t classes, std::size_t n, std::size_t num_tasks,
                                        std::size_t steps_per_task, std::uint64_t seed,
                                        SyntheticOptions opts = {}, std::size_t batch_size = 16) {
  if (num_tasks == 0 || steps_per_task == 0 || batch_size == 0) {
    throw ArgumentError("synthetic stream sizes must be positive");
  }
  TaskStream s;
  s.transform = opts.transform;
  s.base = std::make_shared<const Dataset>(
      make_synthetic_dataset(width, classes, n, opts.spread, RngStream(seed).split("synthetic")));
  s.num_tasks = num_tasks;
  s.steps_per_task = steps_per_task;
  s.batch_size = batch_size;
  s.num_classes = classes;
  s.seed = seed;
  return s;
}

}  // namespace plasticity
