#include "abpt/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#ifndef ABPT_GIT_DESCRIBE
#define ABPT_GIT_DESCRIBE "unknown"
#endif

namespace abpt {

using ojson = nlohmann::ordered_json;

namespace {

void put_double(std::string& out, double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  out.append(buf, res.ptr);
}

double get_double(std::string_view s, const std::string& where) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error(where + ": cannot parse '" + std::string(s) + "' as a number");
  return x;
}

long get_long(std::string_view s, const std::string& where) {
  long x = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error(where + ": cannot parse '" + std::string(s) + "' as an integer");
  return x;
}

std::string csv_row(const IterationRecord& r) {
  std::string s = std::to_string(r.iter) + "," + std::to_string(r.steps);
  for (double x : {r.wall_s, r.eval_reward, r.eval_success, r.actor_obj, r.critic_loss, r.kappa, r.grad_norm}) {
    s += ',';
    put_double(s, x);
  }
  return s;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

std::string run_csv_string(const std::vector<IterationRecord>& records) {
  std::string s = std::string(kRunCsvHeader) + "\n";
  for (const IterationRecord& r : records) s += csv_row(r) + "\n";
  return s;
}

void write_run_csv(const fs::path& path, const std::vector<IterationRecord>& records) {
  write_file(path, run_csv_string(records));
}

std::vector<IterationRecord> parse_run_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kRunCsvHeader)
    throw std::runtime_error("run.csv: header must be '" + std::string(kRunCsvHeader) + "'");
  std::vector<IterationRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    while (true) {
      const std::size_t comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    const std::string where = "run.csv line " + std::to_string(lineno);
    if (f.size() != 9) throw std::runtime_error(where + ": expected 9 fields, got " + std::to_string(f.size()));
    IterationRecord r;
    r.iter = get_long(f[0], where);
    r.steps = get_long(f[1], where);
    r.wall_s = get_double(f[2], where);
    r.eval_reward = get_double(f[3], where);
    r.eval_success = get_double(f[4], where);
    r.actor_obj = get_double(f[5], where);
    r.critic_loss = get_double(f[6], where);
    r.kappa = get_double(f[7], where);
    r.grad_norm = get_double(f[8], where);
    out.push_back(r);
  }
  return out;
}

std::vector<IterationRecord> read_run_csv(const fs::path& path) { return parse_run_csv(read_file(path)); }

std::string build_version() { return ABPT_GIT_DESCRIBE; }

ojson manifest_json(const Manifest& m) {
  ojson j;
  j["format"] = "abpt-run-manifest";
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["aborted"] = m.aborted;
  j["abort_reason"] = m.abort_reason;
  j["config"] = to_json(m.config);
  return j;
}

void write_manifest(const fs::path& path, const Manifest& m) { write_file(path, manifest_json(m).dump(2) + "\n"); }

Manifest read_manifest(const fs::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", path.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "abpt-run-manifest" || !j.contains("config"))
    throw ConfigError("", path.string() + " is not a run manifest");
  Manifest m;
  m.config = config_from_json(j["config"]);
  m.seed = j.value("seed", m.config.seeds.front());
  m.config_hash = j.value("config_hash", "");
  m.version = j.value("version", "");
  m.aborted = j.value("aborted", false);
  m.abort_reason = j.value("abort_reason", "");
  return m;
}

RunResult run_single(const RunConfig& config, std::uint64_t seed, const fs::path& dir, std::ostream* progress) {
  RunConfig rc = config;
  rc.seeds = {seed};
  rc.train.seed = seed;
  rc.out = dir.string();
  validate_config(rc);
  make_dirs(dir);

  const fs::path csv_path = dir / "run.csv";
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << kRunCsvHeader << '\n';

  Manifest m;
  m.config = rc;
  m.seed = seed;
  m.config_hash = config_hash(rc);
  m.version = build_version();
  write_manifest(dir / "manifest.json", m);

  auto save = [&](const ActorCriticParams& p, const fs::path& path) {
    try {
      save_checkpoint(p, path.string());
    } catch (const std::exception& e) {
      throw IoError(e.what());
    }
  };

  Trainer trainer(rc.train);
  RunResult result;
  result.dir = dir;
  result.log = trainer.run([&](const IterationRecord& r, const ActorCriticParams& p) {
    csv << csv_row(r) << '\n';
    csv.flush();
    if (!csv) throw IoError("write failed for " + csv_path.string());
    if (rc.checkpoint_every > 0 && (r.iter + 1) % rc.checkpoint_every == 0)
      save(p, dir / ("checkpoint_" + std::to_string(r.iter + 1) + ".json"));
    if (progress && r.evaluated)
      *progress << algorithm_name(rc.train.algo) << " " << task_name(rc.train.task.kind) << " seed " << seed
                << "  iter " << r.iter << "  steps " << r.steps << "  reward " << std::fixed << std::setprecision(2)
                << r.eval_reward << "  success " << r.eval_success << std::defaultfloat << "\n";
  });
  save(trainer.params(), dir / "checkpoint_final.json");

  m.aborted = result.log.aborted;
  m.abort_reason = result.log.abort_reason;
  write_manifest(dir / "manifest.json", m);
  return result;
}

std::vector<RunResult> run_campaign(const RunConfig& config, std::ostream* progress, bool flat) {
  validate_config(config);
  std::vector<RunResult> out;
  const fs::path root(config.out);
  for (std::uint64_t s : config.seeds) {
    const fs::path dir = flat && config.seeds.size() == 1 ? root : root / ("seed_" + std::to_string(s));
    out.push_back(run_single(config, s, dir, progress));
  }
  return out;
}

// ---- comparison ----

LoadedRun load_run(const fs::path& dir) {
  LoadedRun r;
  r.dir = dir;
  const Manifest m = read_manifest(dir / "manifest.json");
  r.algo = std::string(algorithm_name(m.config.train.algo));
  r.task = std::string(task_name(m.config.train.task.kind));
  r.seed = m.seed;
  r.records = read_run_csv(dir / "run.csv");
  if (r.records.empty()) throw std::runtime_error(dir.string() + ": run.csv has no rows");
  return r;
}

namespace {

// Piecewise-linear through (xs, ys), constant beyond the ends.
double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - xs.begin());
  const double x0 = xs[i - 1], x1 = xs[i];
  if (x1 == x0) return ys[i];
  const double w = (x - x0) / (x1 - x0);
  return ys[i - 1] + w * (ys[i] - ys[i - 1]);
}

Band make_band(const std::vector<double>& grid, const std::vector<std::vector<double>>& xs,
               const std::vector<std::vector<double>>& ys) {
  Band b;
  b.x = grid;
  for (double x : grid) {
    double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t r = 0; r < xs.size(); ++r) {
      const double y = interpolate(xs[r], ys[r], x);
      sum += y;
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
    b.mean.push_back(sum / static_cast<double>(xs.size()));
    b.lo.push_back(lo);
    b.hi.push_back(hi);
  }
  return b;
}

}  // namespace

Comparison compare_runs(const std::vector<LoadedRun>& runs, int wall_points) {
  if (runs.empty()) throw std::runtime_error("compare: no runs given");
  if (wall_points < 2) throw std::invalid_argument("compare: need at least 2 wall-time points");
  Comparison c;
  c.task = runs.front().task;
  for (const LoadedRun& r : runs)
    if (r.task != c.task)
      throw std::runtime_error("compare: runs mix tasks (" + c.task + " in " + runs.front().dir.string() + ", " + r.task +
                               " in " + r.dir.string() + ")");

  std::vector<std::string> order;
  std::map<std::string, std::vector<const LoadedRun*>> groups;
  for (const LoadedRun& r : runs) {
    if (!groups.count(r.algo)) order.push_back(r.algo);
    groups[r.algo].push_back(&r);
  }

  for (const std::string& algo : order) {
    const auto& g = groups[algo];
    AlgoCurves a;
    a.algo = algo;
    a.runs = static_cast<int>(g.size());
    std::vector<std::vector<double>> steps, walls, rewards;
    std::vector<double> grid;
    double wall_lo = 0.0, wall_hi = std::numeric_limits<double>::infinity();
    for (const LoadedRun* r : g) {
      std::vector<double> s, w, y;
      for (const IterationRecord& rec : r->records) {
        s.push_back(static_cast<double>(rec.steps));
        w.push_back(rec.wall_s);
        y.push_back(rec.eval_reward);
      }
      grid.insert(grid.end(), s.begin(), s.end());
      wall_lo = std::max(wall_lo, w.front());
      wall_hi = std::min(wall_hi, w.back());
      steps.push_back(std::move(s));
      walls.push_back(std::move(w));
      rewards.push_back(std::move(y));
      const IterationRecord& last = r->records.back();
      a.final_mean += last.eval_reward / static_cast<double>(g.size());
      a.final_success += last.eval_success / static_cast<double>(g.size());
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    a.by_steps = make_band(grid, steps, rewards);

    if (!(wall_hi > wall_lo)) {
      // No common span; fall back to the union.
      wall_lo = std::numeric_limits<double>::infinity();
      wall_hi = 0.0;
      for (const auto& w : walls) {
        wall_lo = std::min(wall_lo, w.front());
        wall_hi = std::max(wall_hi, w.back());
      }
    }
    std::vector<double> wgrid;
    for (int i = 0; i < wall_points; ++i)
      wgrid.push_back(wall_lo + (wall_hi - wall_lo) * static_cast<double>(i) / (wall_points - 1));
    a.by_wall = make_band(wgrid, walls, rewards);

    a.final_min = std::numeric_limits<double>::infinity();
    a.final_max = -a.final_min;
    for (const LoadedRun* r : g) {
      a.final_min = std::min(a.final_min, r->records.back().eval_reward);
      a.final_max = std::max(a.final_max, r->records.back().eval_reward);
    }
    c.algos.push_back(std::move(a));
  }
  return c;
}

std::string comparison_table(const Comparison& c) {
  std::ostringstream os;
  os << "task: " << c.task << "\n";
  os << std::left << std::setw(8) << "algo" << std::right << std::setw(6) << "runs" << std::setw(14) << "final_mean"
     << std::setw(14) << "final_min" << std::setw(14) << "final_max" << std::setw(12) << "success" << "\n";
  os << std::fixed << std::setprecision(3);
  for (const AlgoCurves& a : c.algos)
    os << std::left << std::setw(8) << a.algo << std::right << std::setw(6) << a.runs << std::setw(14) << a.final_mean
       << std::setw(14) << a.final_min << std::setw(14) << a.final_max << std::setw(12) << a.final_success << "\n";
  return os.str();
}

namespace {

std::string band_csv(const Comparison& c, bool wall) {
  std::string s = wall ? "algo,wall_s,mean,min,max\n" : "algo,steps,mean,min,max\n";
  for (const AlgoCurves& a : c.algos) {
    const Band& b = wall ? a.by_wall : a.by_steps;
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      s += a.algo;
      for (double x : {b.x[i], b.mean[i], b.lo[i], b.hi[i]}) {
        s += ',';
        put_double(s, x);
      }
      s += '\n';
    }
  }
  return s;
}

std::string fmt(double x, int prec = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << x;
  return os.str();
}

}  // namespace

std::string comparison_svg(const Comparison& c) {
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double panel_w = 420, panel_h = 280, margin = 50, top = 40;
  const double width = 2 * panel_w + 3 * margin, height = panel_h + top + margin + 30;

  double ylo = std::numeric_limits<double>::infinity(), yhi = -ylo;
  for (const AlgoCurves& a : c.algos)
    for (const Band* b : {&a.by_steps, &a.by_wall}) {
      for (double v : b->lo) ylo = std::min(ylo, v);
      for (double v : b->hi) yhi = std::max(yhi, v);
    }
  if (!(yhi > ylo)) {
    ylo -= 1.0;
    yhi += 1.0;
  }

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << c.task
     << ": evaluation reward</text>\n";

  for (int panel = 0; panel < 2; ++panel) {
    const bool wall = panel == 1;
    const double x0 = margin + panel * (panel_w + margin), y0 = top;
    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
    for (const AlgoCurves& a : c.algos) {
      const Band& b = wall ? a.by_wall : a.by_steps;
      xlo = std::min(xlo, b.x.front());
      xhi = std::max(xhi, b.x.back());
    }
    if (!(xhi > xlo)) xhi = xlo + 1.0;
    auto px = [&](double x) { return x0 + (x - xlo) / (xhi - xlo) * panel_w; };
    auto py = [&](double y) { return y0 + panel_h - (y - ylo) / (yhi - ylo) * panel_h; };

    os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel_w << "\" height=\"" << panel_h
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << y0 + panel_h + 32 << "\" text-anchor=\"middle\">"
       << (wall ? "wall time (s)" : "env steps") << "</text>\n";
    os << "<text x=\"" << x0 << "\" y=\"" << y0 + panel_h + 16 << "\">" << fmt(xlo, wall ? 1 : 0) << "</text>\n";
    os << "<text x=\"" << x0 + panel_w << "\" y=\"" << y0 + panel_h + 16 << "\" text-anchor=\"end\">"
       << fmt(xhi, wall ? 1 : 0) << "</text>\n";
    os << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + 10 << "\" text-anchor=\"end\">" << fmt(yhi, 0) << "</text>\n";
    os << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + panel_h << "\" text-anchor=\"end\">" << fmt(ylo, 0)
       << "</text>\n";

    for (std::size_t k = 0; k < c.algos.size(); ++k) {
      const AlgoCurves& a = c.algos[k];
      const Band& b = wall ? a.by_wall : a.by_steps;
      const char* color = colors[k % 6];
      os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < b.x.size(); ++i) os << fmt(px(b.x[i])) << "," << fmt(py(b.hi[i])) << " ";
      for (std::size_t i = b.x.size(); i-- > 0;) os << fmt(px(b.x[i])) << "," << fmt(py(b.lo[i])) << " ";
      os << "\"/>\n";
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < b.x.size(); ++i) os << fmt(px(b.x[i])) << "," << fmt(py(b.mean[i])) << " ";
      os << "\"/>\n";
      if (panel == 0)
        os << "<text x=\"" << x0 + 8 << "\" y=\"" << y0 + 16 + 14 * k << "\" fill=\"" << color << "\">" << a.algo
           << " (" << a.runs << ")</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

void write_comparison(const Comparison& c, const fs::path& out_dir) {
  make_dirs(out_dir);
  write_file(out_dir / "compare_steps.csv", band_csv(c, false));
  write_file(out_dir / "compare_wall.csv", band_csv(c, true));
  write_file(out_dir / "compare.svg", comparison_svg(c));
  write_file(out_dir / "final.txt", comparison_table(c));
}

// ---- detach experiment ----

namespace {

double tail_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const std::size_t start = v.size() / 2;
  double s = 0.0;
  for (std::size_t i = start; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(v.size() - start);
}

std::vector<ParamList> actor_trajectory(const TrainConfig& config, const ActorCriticParams& init,
                                        std::vector<long>* steps) {
  std::vector<ParamList> out{init.actor.params};
  if (steps) steps->assign(1, 0);
  Trainer t(config, init);
  const TrainLog log = t.run([&](const IterationRecord& r, const ActorCriticParams& p) {
    out.push_back(p.actor.params);
    if (steps) steps->push_back(r.steps);
  });
  if (log.aborted) throw std::runtime_error("detach experiment: training aborted: " + log.abort_reason);
  return out;
}

}  // namespace

double DetachResult::mean_tail_with() const { return tail_mean(with_zero_step); }
double DetachResult::mean_tail_without() const { return tail_mean(without_zero_step); }

DetachResult detach_experiment(const TrainConfig& base, DetachedTerms detached) {
  if (base.task.kind != TaskKind::kHovering) throw std::invalid_argument("detach experiment runs on the hovering task");
  if (base.algo != Algorithm::kAbpt) throw std::invalid_argument("detach experiment needs algo abpt");
  if (!detached.any()) detached.position = true;

  TrainConfig full = base;
  full.task.detached = {};
  full.eval_every = std::numeric_limits<int>::max();  // evaluation plays no part here
  TrainConfig cut = full;
  cut.task.detached = detached;
  const ActorCriticParams init = initial_params(full);

  DetachResult r;
  std::vector<long> steps;
  for (bool zero_step : {true, false}) {
    full.ablation.use_zero_step = zero_step;
    cut.ablation.use_zero_step = zero_step;
    const auto a = actor_trajectory(full, init, &steps);
    const auto b = actor_trajectory(cut, init, nullptr);
    auto& dst = zero_step ? r.with_zero_step : r.without_zero_step;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) dst.push_back(l2_distance(a[i], b[i]));
  }
  const std::size_t n = std::min(r.with_zero_step.size(), r.without_zero_step.size());
  r.with_zero_step.resize(n);
  r.without_zero_step.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.iter.push_back(static_cast<long>(i));
    r.steps.push_back(i < steps.size() ? steps[i] : steps.back());
  }
  return r;
}

void write_detach_csv(const fs::path& path, const DetachResult& r) {
  std::string s = "iter,steps,residual_with_zero_step,residual_without_zero_step\n";
  for (std::size_t i = 0; i < r.iter.size(); ++i) {
    s += std::to_string(r.iter[i]) + "," + std::to_string(r.steps[i]);
    for (double x : {r.with_zero_step[i], r.without_zero_step[i]}) {
      s += ',';
      put_double(s, x);
    }
    s += '\n';
  }
  write_file(path, s);
}

}  // namespace abpt
