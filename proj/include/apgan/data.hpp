#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "apgan/io.hpp"
#include "apgan/random.hpp"
#include "apgan/tensor.hpp"

namespace apgan {

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, version_mismatch, truncated, checksum, invalid };

  DatasetError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class Modality : std::uint8_t { a = 0, b = 1 };

inline const char* modality_name(Modality m) { return m == Modality::a ? "a" : "b"; }

// One synthetic "video": K raw segment vectors plus a class label.
struct FeatureSequence {
  std::uint64_t id = 0;
  std::size_t label = 0;
  Modality modality = Modality::a;
  Tensor segments;  // K x d_raw
};

// The first k segments of a sequence.
struct PartialView {
  std::uint64_t source_id = 0;
  std::size_t progress = 0;  // k, 1-based
  double ratio = 0.0;        // k / K
  std::size_t label = 0;
  Tensor segments;  // k x d_raw
};

struct SynthSpec {
  std::size_t n_classes = 8;
  std::size_t segments = 10;  // K
  std::size_t d_raw = 32;
  std::size_t n_train = 200;
  std::size_t n_test = 100;
  // 0 = class signal from the first segment; 1 = segments before the onset
  // carry no class information at all.
  double ambiguity = 1.0;
  // 0 = pick from K: min becomes min(2, K), max becomes about 0.7*K.
  std::size_t onset_min = 0;  // 1-based, inclusive
  std::size_t onset_max = 0;
  double noise = 0.75;  // per-coordinate sigma added independently per modality
  std::uint64_t seed = 7;

  SynthSpec resolved() const {
    SynthSpec r = *this;
    if (r.onset_min == 0) r.onset_min = std::min<std::size_t>(2, segments);
    if (r.onset_max == 0) {
      r.onset_max = std::max(r.onset_min, std::min(segments, (2 * segments + 2) / 5));
    }
    return r;
  }

  void validate() const {
    if (n_classes < 2) throw DatasetError(DatasetError::Kind::invalid, "n_classes must be >= 2");
    if (segments < 1) throw DatasetError(DatasetError::Kind::invalid, "segments must be >= 1");
    if (d_raw < 1) throw DatasetError(DatasetError::Kind::invalid, "d_raw must be >= 1");
    if (ambiguity < 0.0 || ambiguity > 1.0) {
      throw DatasetError(DatasetError::Kind::invalid, "ambiguity must be in [0,1]");
    }
    if (noise < 0.0) throw DatasetError(DatasetError::Kind::invalid, "noise must be >= 0");
    if (onset_min < 1 || onset_max > segments || onset_min > onset_max) {
      throw DatasetError(DatasetError::Kind::invalid,
                         "onset range must satisfy 1 <= min <= max <= K");
    }
  }
};

struct Dataset {
  std::size_t n_classes = 0;
  std::size_t segments = 0;  // K
  std::size_t d_raw = 0;
  std::uint64_t seed = 0;
  std::vector<FeatureSequence> sequences;

  std::size_t size() const { return sequences.size(); }
};

struct SynthOutput {
  Dataset train_a, train_b, test_a, test_b;
};

// A class trajectory circles a class-group plane: segments after the onset
// are points on a slow rotation through a 2-D subspace, entered at a random
// lattice phase. Classes come in direction pairs over the same plane: the
// visited point set of any contiguous window is phase-symmetric, so prefix
// averaging carries (almost) no direction information, while the travel
// direction of the pooled trajectory resolves it. The first ceil(C/2)
// classes rotate forward over distinct planes, the rest are the reversed
// twins of those planes in order. A tiny per-class identity component keeps
// classes separable from single segments in the noise-free limit.
inline constexpr double kPlaneRadius = 3.0;      // relative to the shared-prototype scale
inline constexpr std::size_t kRotationPeriod = 8;  // lattice positions per revolution
inline constexpr double kClassIdScale = 0.01;

// Class-conditional sequence synthesis. Every sequence shares a common
// prototype trajectory before its onset segment (mixed by `ambiguity`) and
// follows its class rotation from the onset onward; the two modalities are
// independent noisy observations of the same latent trajectory.
inline SynthOutput synthesize(const SynthSpec& raw_spec) {
  const SynthSpec spec = raw_spec.resolved();
  spec.validate();
  Rng rng(spec.seed);

  const std::size_t k = spec.segments;
  const std::size_t d = spec.d_raw;
  const std::size_t groups = (spec.n_classes + 1) / 2;

  Tensor shared({k, d});
  for (std::size_t i = 0; i < shared.size(); ++i) shared[i] = rng.normal();

  // orthonormal plane axes per group, scaled to kPlaneRadius * sqrt(d)
  const double axis_norm = kPlaneRadius * std::sqrt(static_cast<double>(d));
  std::vector<std::pair<Tensor, Tensor>> planes;
  planes.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    Tensor p({d}), q({d});
    for (std::size_t j = 0; j < d; ++j) p[j] = rng.normal();
    for (std::size_t j = 0; j < d; ++j) q[j] = rng.normal();
    double pn = 0.0;
    for (std::size_t j = 0; j < d; ++j) pn += p[j] * p[j];
    pn = std::sqrt(pn);
    for (std::size_t j = 0; j < d; ++j) p[j] /= pn;
    double pq = 0.0;
    for (std::size_t j = 0; j < d; ++j) pq += p[j] * q[j];
    for (std::size_t j = 0; j < d; ++j) q[j] -= pq * p[j];
    double qn = 0.0;
    for (std::size_t j = 0; j < d; ++j) qn += q[j] * q[j];
    qn = std::sqrt(qn);
    for (std::size_t j = 0; j < d; ++j) q[j] /= qn;
    for (std::size_t j = 0; j < d; ++j) {
      p[j] *= axis_norm;
      q[j] *= axis_norm;
    }
    planes.emplace_back(std::move(p), std::move(q));
  }

  std::vector<Tensor> class_id(spec.n_classes, Tensor({d}));
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    for (std::size_t j = 0; j < d; ++j) class_id[c][j] = kClassIdScale * rng.normal();
  }

  // rotation value of class c at absolute segment `seg` (0-based) for a
  // 1-based onset and lattice phase; defined for pre-onset segments too so
  // the ambiguity blend has something to blend toward
  auto class_row = [&](std::size_t c, std::size_t seg, std::size_t onset, std::size_t phase0,
                       double* row) {
    const std::size_t group = c % groups;
    const double direction = c < groups ? 1.0 : -1.0;
    const double tau =
        static_cast<double>(static_cast<long>(seg) - (static_cast<long>(onset) - 1));
    const double angle = 2.0 * 3.14159265358979323846 *
                         (static_cast<double>(phase0) + direction * tau) /
                         static_cast<double>(kRotationPeriod);
    const double cos_a = std::cos(angle);
    const double sin_a = std::sin(angle);
    const double* p = planes[group].first.data();
    const double* q = planes[group].second.data();
    const double* id = class_id[c].data();
    for (std::size_t j = 0; j < d; ++j) row[j] = cos_a * p[j] + sin_a * q[j] + id[j];
  };

  SynthOutput out;
  for (Dataset* ds : {&out.train_a, &out.train_b, &out.test_a, &out.test_b}) {
    ds->n_classes = spec.n_classes;
    ds->segments = k;
    ds->d_raw = d;
    ds->seed = spec.seed;
  }

  auto fill_split = [&](Dataset& mod_a, Dataset& mod_b, std::size_t count, std::uint64_t id_base) {
    mod_a.sequences.reserve(count);
    mod_b.sequences.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
      const std::size_t label = static_cast<std::size_t>(rng.uniform_int(0, spec.n_classes - 1));
      const std::size_t onset = static_cast<std::size_t>(rng.uniform_int(spec.onset_min, spec.onset_max));
      const std::size_t phase0 =
          static_cast<std::size_t>(rng.uniform_int(0, kRotationPeriod - 1));

      Tensor latent({k, d});
      std::vector<double> klass_row(d);
      for (std::size_t seg = 0; seg < k; ++seg) {
        const double* u = shared.row(seg);
        class_row(label, seg, onset, phase0, klass_row.data());
        double* l = latent.row(seg);
        if (seg + 1 < onset) {
          for (std::size_t j = 0; j < d; ++j) {
            l[j] = spec.ambiguity * u[j] + (1.0 - spec.ambiguity) * klass_row[j];
          }
        } else {
          for (std::size_t j = 0; j < d; ++j) l[j] = klass_row[j];
        }
      }

      FeatureSequence seq_a{id_base + n, label, Modality::a, Tensor({k, d})};
      FeatureSequence seq_b{id_base + n, label, Modality::b, Tensor({k, d})};
      for (std::size_t i = 0; i < latent.size(); ++i) {
        seq_a.segments[i] = latent[i] + spec.noise * rng.normal();
      }
      for (std::size_t i = 0; i < latent.size(); ++i) {
        seq_b.segments[i] = latent[i] + spec.noise * rng.normal();
      }
      mod_a.sequences.push_back(std::move(seq_a));
      mod_b.sequences.push_back(std::move(seq_b));
    }
  };

  fill_split(out.train_a, out.train_b, spec.n_train, 0);
  fill_split(out.test_a, out.test_b, spec.n_test, spec.n_train);
  return out;
}

inline PartialView make_view(const FeatureSequence& seq, std::size_t progress, std::size_t total_segments) {
  const std::size_t d = seq.segments.cols();
  PartialView view;
  view.source_id = seq.id;
  view.progress = progress;
  view.ratio = static_cast<double>(progress) / static_cast<double>(total_segments);
  view.label = seq.label;
  view.segments = Tensor({progress, d});
  for (std::size_t i = 0; i < progress * d; ++i) view.segments[i] = seq.segments[i];
  return view;
}

// N sequences become N*K prefix views, ordered by (sequence, k).
inline std::vector<PartialView> expand_views(const Dataset& ds) {
  std::vector<PartialView> views;
  views.reserve(ds.sequences.size() * ds.segments);
  for (const FeatureSequence& seq : ds.sequences) {
    if (seq.segments.rows() != ds.segments) {
      throw DatasetError(DatasetError::Kind::invalid,
                         "expand_views: sequence " + std::to_string(seq.id) + " has " +
                             std::to_string(seq.segments.rows()) + " segments, dataset declares " +
                             std::to_string(ds.segments));
    }
    for (std::size_t prog = 1; prog <= ds.segments; ++prog) {
      views.push_back(make_view(seq, prog, ds.segments));
    }
  }
  return views;
}

// ---------------------------------------------------------------------------
// Dataset file format
//   header : magic "APGNDS01" | u32 version | u32 C | u32 K | u32 d_raw
//            | u32 count | u64 seed | u64 fnv1a64(records)
//   record : u64 id | u32 label | u32 modality | K*d_raw f64 (little-endian)
// ---------------------------------------------------------------------------

inline constexpr char kDatasetMagic[8] = {'A', 'P', 'G', 'N', 'D', 'S', '0', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::string records;
  records.reserve(ds.sequences.size() * (16 + ds.segments * ds.d_raw * 8));
  for (const FeatureSequence& seq : ds.sequences) {
    detail::put_u64(records, seq.id);
    detail::put_u32(records, static_cast<std::uint32_t>(seq.label));
    detail::put_u32(records, static_cast<std::uint32_t>(seq.modality));
    for (std::size_t i = 0; i < seq.segments.size(); ++i) detail::put_f64(records, seq.segments[i]);
  }

  std::string bytes;
  bytes.append(kDatasetMagic, sizeof(kDatasetMagic));
  detail::put_u32(bytes, kDatasetVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(ds.n_classes));
  detail::put_u32(bytes, static_cast<std::uint32_t>(ds.segments));
  detail::put_u32(bytes, static_cast<std::uint32_t>(ds.d_raw));
  detail::put_u32(bytes, static_cast<std::uint32_t>(ds.sequences.size()));
  detail::put_u64(bytes, ds.seed);
  detail::put_u64(bytes, detail::fnv1a64(records.data(), records.size()));
  bytes += records;
  detail::write_file(path, bytes);
}

inline Dataset load_dataset(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader reader(bytes, path);

  const std::string magic = reader.raw(sizeof(kDatasetMagic));
  if (magic != std::string(kDatasetMagic, sizeof(kDatasetMagic))) {
    throw DatasetError(DatasetError::Kind::bad_magic, path + ": not a dataset file");
  }
  const std::uint32_t version = reader.u32();
  if (version != kDatasetVersion) {
    throw DatasetError(DatasetError::Kind::version_mismatch,
                       path + ": dataset version " + std::to_string(version) + ", expected " +
                           std::to_string(kDatasetVersion));
  }

  Dataset ds;
  ds.n_classes = reader.u32();
  ds.segments = reader.u32();
  ds.d_raw = reader.u32();
  const std::uint32_t count = reader.u32();
  ds.seed = reader.u64();
  const std::uint64_t stored_checksum = reader.u64();

  const std::size_t record_bytes = 16 + ds.segments * ds.d_raw * 8;
  if (reader.remaining() != static_cast<std::size_t>(count) * record_bytes) {
    throw DatasetError(DatasetError::Kind::truncated,
                       path + ": expected " + std::to_string(count * record_bytes) +
                           " record bytes, found " + std::to_string(reader.remaining()));
  }
  const std::uint64_t actual_checksum =
      detail::fnv1a64(bytes.data() + reader.position(), reader.remaining());
  if (actual_checksum != stored_checksum) {
    throw DatasetError(DatasetError::Kind::checksum, path + ": checksum mismatch");
  }

  ds.sequences.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    FeatureSequence seq;
    seq.id = reader.u64();
    seq.label = reader.u32();
    const std::uint32_t modality = reader.u32();
    if (seq.label >= ds.n_classes || modality > 1) {
      throw DatasetError(DatasetError::Kind::invalid, path + ": corrupt record fields");
    }
    seq.modality = static_cast<Modality>(modality);
    seq.segments = Tensor({ds.segments, ds.d_raw});
    for (std::size_t i = 0; i < seq.segments.size(); ++i) seq.segments[i] = reader.f64();
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

// Debug dump: one record per line, comma separated.
inline void export_dataset_text(const std::string& path, const Dataset& ds) {
  std::string out = "id,label,modality,values...\n";
  char buf[32];
  for (const FeatureSequence& seq : ds.sequences) {
    out += std::to_string(seq.id) + "," + std::to_string(seq.label) + "," +
           modality_name(seq.modality);
    for (std::size_t i = 0; i < seq.segments.size(); ++i) {
      std::snprintf(buf, sizeof(buf), ",%.17g", seq.segments[i]);
      out += buf;
    }
    out += "\n";
  }
  detail::write_file(path, out);
}

}  // namespace apgan
