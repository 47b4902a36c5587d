#include "cgt/synth.hpp"

#include "cgt/io.hpp"
#include "cgt/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>
#include <utility>

namespace cgt {

namespace {

// Population std of one clean channel; anomaly magnitudes are quoted in these
// units so "an 8 sigma spike" means the same thing on every channel.
double channel_std(const SeriesFrame& frame, int channel) {
  const auto col = frame.values.col(channel);
  const double mean = col.mean();
  const double var = (col.array() - mean).square().mean();
  return std::sqrt(var);
}

// Recomputes one structural value from `values` using the stored innovation.
double structural_value(const Mat& values, const Mat& noise, const ScmSpec& spec, int ext_t,
                        int channel, const std::vector<ScmEdge>& incoming) {
  double x = spec.noise_std[channel] * noise(ext_t, channel);
  for (const ScmEdge& e : incoming) {
    if (ext_t - e.lag >= 0) x += e.weight * values(ext_t - e.lag, e.source);
  }
  return x;
}

}  // namespace

void ScmSpec::validate() const {
  if (dims < 1) throw SynthError("ScmSpec.dims must be >= 1");
  if (tau_max < 1) throw SynthError("ScmSpec.tau_max must be >= 1");
  if (length < 1) throw SynthError("ScmSpec.length must be >= 1");
  if (burn_in < tau_max) throw SynthError("ScmSpec.burn_in must be >= tau_max");
  if (noise_std.size() != dims) throw SynthError("ScmSpec.noise_std must have one entry per channel");
  for (int i = 0; i < dims; ++i) {
    if (!(noise_std[i] > 0.0) || !std::isfinite(noise_std[i]))
      throw SynthError("ScmSpec.noise_std entries must be positive and finite");
  }
  std::map<std::tuple<int, int, int>, double> seen;
  for (const ScmEdge& e : edges) {
    if (e.source < 0 || e.source >= dims || e.target < 0 || e.target >= dims)
      throw SynthError("ScmSpec edge references a channel outside [0, dims)");
    if (e.lag < 1 || e.lag > tau_max) throw SynthError("ScmSpec edge lag must lie in [1, tau_max]");
    if (!std::isfinite(e.weight)) throw SynthError("ScmSpec edge weight must be finite");
    if (!seen.emplace(std::make_tuple(e.source, e.lag, e.target), e.weight).second)
      throw SynthError("ScmSpec has duplicate coefficient for one (source, lag, target) triple");
  }
}

Mat ScmSpec::companion() const {
  const int n = dims * tau_max;
  Mat A = Mat::Zero(n, n);
  for (const ScmEdge& e : edges) A(e.target, (e.lag - 1) * dims + e.source) = e.weight;
  for (int r = dims; r < n; ++r) A(r, r - dims) = 1.0;
  return A;
}

double ScmSpec::spectral_radius() const {
  Eigen::EigenSolver<Mat> solver(companion(), /*computeEigenvectors=*/false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

ScmData generate_scm(const ScmSpec& spec) {
  spec.validate();
  const double radius = spec.spectral_radius();
  if (radius >= 1.0) {
    std::ostringstream msg;
    msg << "unstable structural model: companion spectral radius " << radius << " is >= 1";
    throw SynthError(msg.str());
  }

  const int ext = spec.burn_in + spec.length;
  Rng rng(spec.seed);
  Mat noise = rng.normal_mat(ext, spec.dims);

  std::vector<std::vector<ScmEdge>> incoming(spec.dims);
  for (const ScmEdge& e : spec.edges) incoming[e.target].push_back(e);

  Mat values = Mat::Zero(ext, spec.dims);
  for (int t = 0; t < ext; ++t) {
    for (int i = 0; i < spec.dims; ++i) {
      values(t, i) = structural_value(values, noise, spec, t, i, incoming[i]);
    }
  }

  ScmData out;
  out.frame.channel_names.reserve(spec.dims);
  for (int i = 0; i < spec.dims; ++i) out.frame.channel_names.push_back("s" + std::to_string(i));
  out.frame.values = values.bottomRows(spec.length);
  out.graph.dims = spec.dims;
  out.graph.tau_max = spec.tau_max;
  for (const ScmEdge& e : spec.edges)
    out.graph.add_edge({e.source, e.lag, e.target, e.weight, std::nullopt});
  out.graph.validate();
  out.noise = std::move(noise);
  out.spec = spec;
  return out;
}

AnomalyType parse_anomaly_type(const std::string& name) {
  if (name == "spike") return AnomalyType::Spike;
  if (name == "level_shift") return AnomalyType::LevelShift;
  if (name == "mechanism_break") return AnomalyType::MechanismBreak;
  throw SynthError("unknown anomaly type: " + name);
}

std::string anomaly_type_name(AnomalyType type) {
  switch (type) {
    case AnomalyType::Spike: return "spike";
    case AnomalyType::LevelShift: return "level_shift";
    case AnomalyType::MechanismBreak: return "mechanism_break";
  }
  throw SynthError("unknown anomaly type");
}

InjectResult inject_anomalies(const ScmData& data, const std::vector<AnomalyEvent>& events,
                              int min_start) {
  const int T = data.frame.length();
  const int D = data.frame.dims();
  if (min_start < 0) throw SynthError("min_start must be >= 0");
  for (const AnomalyEvent& ev : events) {
    if (ev.root < 0 || ev.root >= D) throw SynthError("anomaly root outside [0, dims)");
    if (ev.length < 1) throw SynthError("anomaly length must be >= 1");
    if (ev.magnitude < 0.0 || !std::isfinite(ev.magnitude))
      throw SynthError("anomaly magnitude must be finite and >= 0");
    if (ev.start < min_start)
      throw SynthError("anomaly starts before timestamp " + std::to_string(min_start) +
                       ": no clean history window");
    if (ev.type == AnomalyType::MechanismBreak && ev.start < data.spec.tau_max)
      throw SynthError("mechanism break needs tau_max clean steps of history");
    if (ev.start + ev.length > T) throw SynthError("anomaly extends past the end of the series");
  }
  std::vector<AnomalyEvent> ordered = events;
  std::sort(ordered.begin(), ordered.end(),
            [](const AnomalyEvent& a, const AnomalyEvent& b) { return a.start < b.start; });
  for (std::size_t k = 1; k < ordered.size(); ++k) {
    if (ordered[k].start < ordered[k - 1].start + ordered[k - 1].length)
      throw SynthError("anomaly events overlap");
  }

  InjectResult out;
  out.frame = data.frame;
  out.labels.assign(T, 0);
  out.causes.reserve(events.size());

  std::vector<std::vector<ScmEdge>> incoming(D);
  for (const ScmEdge& e : data.spec.edges) incoming[e.target].push_back(e);

  for (const AnomalyEvent& ev : events) {
    const int end = ev.start + ev.length;  // exclusive
    for (int t = ev.start; t < end; ++t) out.labels[t] = 1;
    out.causes.push_back({ev.root});

    switch (ev.type) {
      case AnomalyType::Spike: {
        const double step = ev.magnitude * channel_std(data.frame, ev.root);
        for (int t = ev.start; t < end; ++t)
          out.frame.values(t, ev.root) += ((t - ev.start) % 2 == 0) ? step : -step;
        break;
      }
      case AnomalyType::LevelShift: {
        const double step = ev.magnitude * channel_std(data.frame, ev.root);
        for (int t = ev.start; t < end; ++t) out.frame.values(t, ev.root) += step;
        break;
      }
      case AnomalyType::MechanismBreak: {
        // Rebuild the window from the stored innovations with the root's
        // structural inputs removed.  History before the window is the clean
        // process trajectory (sensor-level events elsewhere do not leak in),
        // so channels the root cannot reach reproduce the clean series
        // bitwise.
        Mat window = Mat::Zero(data.spec.burn_in + T, D);
        window.block(data.spec.burn_in, 0, ev.start, D) = data.frame.values.topRows(ev.start);
        const std::vector<ScmEdge> severed;  // root becomes pure innovation noise
        for (int t = ev.start; t < end; ++t) {
          const int ext_t = data.spec.burn_in + t;
          for (int i = 0; i < D; ++i) {
            window(ext_t, i) = structural_value(window, data.noise, data.spec, ext_t, i,
                                                i == ev.root ? severed : incoming[i]);
          }
          out.frame.values.row(t) = window.row(ext_t);
        }
        break;
      }
    }
  }
  return out;
}

ScmSpec default_scm_spec(std::uint64_t seed) {
  ScmSpec spec;
  spec.dims = 5;
  spec.tau_max = 2;
  spec.length = 6000;
  spec.burn_in = 200;
  spec.seed = seed;
  spec.noise_std = Vec::Ones(5);
  spec.edges = {
      {0, 1, 0, 0.6},   // self-lag on the upstream driver
      {0, 1, 1, 0.8},  {1, 1, 1, 0.2},   // 0 -> 1 with weak persistence
      {1, 1, 2, 0.7},  {0, 2, 2, -0.3},  // 1 -> 2 plus a negative lag-2 link
      {2, 1, 3, 0.6},  {3, 1, 3, 0.3},   // 2 -> 3
      {4, 1, 4, 0.5},  {1, 2, 4, 0.4},   // isolated-ish channel fed at lag 2
  };
  return spec;
}

std::vector<AnomalyEvent> default_events() {
  // A 1200-step test split starting at 4800 is thresholded from roughly
  // index 5312 on (window + tau_max + burn-in), so all three events land in
  // the region where decisions are actually produced.
  return {
      {5350, 20, 0, AnomalyType::Spike, 8.0},
      {5600, 20, 1, AnomalyType::LevelShift, 6.0},
      {5850, 20, 2, AnomalyType::Spike, 7.0},
  };
}

SynthPaths synth_paths(const std::string& dir) {
  // The ground-truth graph gets its own name so a discovery run into the
  // same directory cannot overwrite it.
  return {dir + "/series.csv", dir + "/graph_true.csv", dir + "/labels.csv", dir + "/causes.csv"};
}

void write_synth_bench(const std::string& dir, const ScmData& clean, const InjectResult& injected) {
  if (injected.frame.length() != clean.frame.length())
    throw SynthError("injected frame length does not match the clean simulation");
  const SynthPaths paths = synth_paths(dir);
  save_series(injected.frame, paths.series, /*with_header=*/true);
  save_edge_list(clean.graph, paths.graph);

  std::vector<std::vector<double>> label_rows;
  label_rows.reserve(injected.labels.size());
  for (std::size_t t = 0; t < injected.labels.size(); ++t)
    label_rows.push_back({static_cast<double>(t), static_cast<double>(injected.labels[t])});
  write_csv(paths.labels, {"t", "label"}, label_rows);

  // One row per (event, cause); start/end are inclusive label bounds.
  std::vector<std::vector<double>> cause_rows;
  int event_id = 0;
  int cursor = 0;
  const int T = static_cast<int>(injected.labels.size());
  std::vector<std::pair<int, int>> segments;
  while (cursor < T) {
    if (injected.labels[cursor] == 0) {
      ++cursor;
      continue;
    }
    int seg_end = cursor;
    while (seg_end + 1 < T && injected.labels[seg_end + 1] == 1) ++seg_end;
    segments.emplace_back(cursor, seg_end);
    cursor = seg_end + 1;
  }
  if (segments.size() != injected.causes.size())
    throw SynthError("label segments do not line up with per-event cause sets");
  for (const auto& [start, seg_end] : segments) {
    for (int sensor : injected.causes[event_id])
      cause_rows.push_back({static_cast<double>(event_id), static_cast<double>(start),
                            static_cast<double>(seg_end), static_cast<double>(sensor)});
    ++event_id;
  }
  write_csv(paths.causes, {"event_id", "start", "end", "sensor"}, cause_rows);
}

std::vector<int> load_labels(const std::string& path, int expected_length) {
  const auto rows = read_numeric_csv(path, /*has_header=*/true);
  if (static_cast<int>(rows.size()) != expected_length)
    throw IngestError("label file has " + std::to_string(rows.size()) + " rows, expected " +
                      std::to_string(expected_length));
  std::vector<int> labels(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != 2) throw IngestError("label rows must be `t,label`");
    if (rows[t][0] != static_cast<double>(t))
      throw IngestError("label timestamps must be 0..T-1 in order");
    if (rows[t][1] != 0.0 && rows[t][1] != 1.0) throw IngestError("labels must be 0 or 1");
    labels[t] = static_cast<int>(rows[t][1]);
  }
  return labels;
}

std::vector<CauseRecord> load_causes(const std::string& path) {
  const auto rows = read_numeric_csv(path, /*has_header=*/true);
  std::vector<CauseRecord> records;
  records.reserve(rows.size());
  int last_event = -1;
  for (const auto& row : rows) {
    if (row.size() != 4) throw IngestError("cause rows must be `event_id,start,end,sensor`");
    CauseRecord rec;
    rec.event_id = static_cast<int>(row[0]);
    rec.start = static_cast<int>(row[1]);
    rec.end = static_cast<int>(row[2]);
    rec.sensor = static_cast<int>(row[3]);
    if (rec.event_id < last_event) throw IngestError("cause rows must be ordered by event id");
    if (rec.start < 0 || rec.end < rec.start) throw IngestError("cause row has an invalid span");
    last_event = rec.event_id;
    records.push_back(rec);
  }
  return records;
}

}  // namespace cgt
