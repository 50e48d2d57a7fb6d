#include "udufact/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "udufact/csv.hpp"
#include "udufact/kernels.hpp"
#include "udufact/linops.hpp"
#include "udufact/problem_gen.hpp"
#include "udufact/random.hpp"
#include "udufact/spectra.hpp"

namespace udufact {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct KindName {
  ExperimentKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {ExperimentKind::Completion, "completion"}, {ExperimentKind::CompletionNoisy, "completion-noisy"},
    {ExperimentKind::Phase, "phase"},           {ExperimentKind::UdvTrain, "udv-train"},
    {ExperimentKind::UdvPrune, "udv-prune"},    {ExperimentKind::Sweep, "sweep"},
};

std::optional<ExperimentKind> kind_from_string(const std::string& s) {
  for (const auto& k : kKindNames)
    if (s == k.name) return k.kind;
  return std::nullopt;
}

bool is_matrix_kind(ExperimentKind k) {
  return k == ExperimentKind::Completion || k == ExperimentKind::CompletionNoisy ||
         k == ExperimentKind::Phase;
}

bool is_udv_kind(ExperimentKind k) {
  return k == ExperimentKind::UdvTrain || k == ExperimentKind::UdvPrune;
}

// Reads typed fields of one JSON object, collecting errors and remembering
// which keys were consumed.
class Fields {
 public:
  Fields(const json& obj, std::string where, std::vector<std::string>& errors)
      : obj_(obj), where_(std::move(where)), errors_(errors) {}

  bool has(const std::string& key) {
    known_.insert(key);
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  void error(const std::string& key, const std::string& rule) {
    errors_.push_back((where_.empty() ? "" : where_ + ": ") + key + " " + rule);
  }

  template <class Pred>
  void number(const std::string& key, double& out, Pred ok, const std::string& rule) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number()) return error(key, "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x) || !ok(x)) return error(key, rule);
    out = x;
  }

  template <class T>
  void integer(const std::string& key, T& out, long long lo, long long hi = (1LL << 40)) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number_integer()) return error(key, "must be an integer");
    const long long x = v.get<long long>();
    if (x < lo || x > hi) {
      std::string rule = "must be >= " + std::to_string(lo);
      if (hi < (1LL << 40)) rule = "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
      return error(key, rule);
    }
    out = static_cast<T>(x);
  }

  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) return error(key, "must be true or false");
    out = v.get<bool>();
  }

  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_string() || v.get<std::string>().empty()) return error(key, "must be a non-empty string");
    out = v.get<std::string>();
  }

  void optional_string(const std::string& key, std::optional<std::string>& out) {
    if (!has(key)) return;
    std::string s;
    string(key, s);
    if (!s.empty()) out = s;
  }

  void seed(const std::string& key, std::optional<std::uint64_t>& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      return error(key, "must be a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  template <class Pred>
  void number_list(const std::string& key, std::vector<double>& out, Pred ok, const std::string& rule) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_array() || v.empty()) return error(key, "must be a non-empty list of numbers");
    std::vector<double> values;
    for (const auto& e : v) {
      if (!e.is_number() || !std::isfinite(e.get<double>()) || !ok(e.get<double>()))
        return error(key, "entries " + rule);
      values.push_back(e.get<double>());
    }
    out = std::move(values);
  }

  template <class T, class Parse>
  void name_list(const std::string& key, std::vector<T>& out, Parse parse) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_array() || v.empty()) return error(key, "must be a non-empty list of names");
    std::vector<T> values;
    std::set<std::string> seen;
    for (const auto& e : v) {
      if (!e.is_string()) return error(key, "must be a non-empty list of names");
      const std::string name = e.get<std::string>();
      std::optional<T> parsed = parse(name);
      if (!parsed) return error(key, "has unknown entry '" + name + "'");
      if (!seen.insert(name).second) return error(key, "lists '" + name + "' twice");
      values.push_back(*parsed);
    }
    out = std::move(values);
  }

  void finish() {
    for (const auto& [key, value] : obj_.items()) {
      if (known_.count(key)) continue;
      errors_.push_back("unknown key '" + key + "'" + (where_.empty() ? "" : " in " + where_));
    }
  }

 private:
  const json& obj_;
  std::string where_;
  std::vector<std::string>& errors_;
  std::set<std::string> known_;
};

auto positive = [](double x) { return x > 0.0; };
auto nonneg = [](double x) { return x >= 0.0; };
auto open_unit = [](double x) { return x > 0.0 && x < 1.0; };

std::optional<SolverKind> parse_solver(const std::string& s) {
  if (s == "udu") return SolverKind::UDU;
  if (s == "bm") return SolverKind::BM;
  return std::nullopt;
}

std::optional<UdvVariant> parse_variant(const std::string& s) {
  for (UdvVariant v : kAllVariants)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

void apply_kind_defaults(ExperimentSpec& spec) {
  const ExperimentKind k = spec.run_kind();
  if (k == ExperimentKind::Phase) {
    spec.problem.d = 64;
    spec.problem.normalize = false;
    spec.solver.eta_inverse_lipschitz = true;
    spec.solver.rank_tol = 1e-4;
  }
  if (k == ExperimentKind::CompletionNoisy) spec.problem.sigma_rel = 1e-2;
}

void parse_problem(const json& j, ExperimentSpec& spec, std::vector<std::string>& errors) {
  Fields f(j, "problem", errors);
  ProblemBlock& p = spec.problem;
  const ExperimentKind k = spec.run_kind();
  f.seed("seed", p.seed);
  f.boolean("normalize", p.normalize);
  if (k == ExperimentKind::Phase) {
    f.integer("d", p.d, 1);
    f.number("oversample", p.oversample, positive, "must be > 0");
    f.optional_string("signal_csv", p.signal_csv);
    if (p.signal_csv && j.contains("d")) f.error("d", "cannot be combined with signal_csv");
  } else {
    f.integer("d", p.d, 1);
    f.integer("r_true", p.r_true, 1);
    f.integer("n", p.n, 1);
    if (k == ExperimentKind::CompletionNoisy) {
      f.number("sigma_rel", p.sigma_rel, nonneg, "must be >= 0");
      f.seed("noise_seed", p.noise_seed);
    }
    if (p.r_true > p.d) f.error("r_true", "must be <= d");
    if (p.n > p.d * p.d) f.error("n", "must be <= d*d");
  }
  f.finish();
}

void parse_solver_block(const json& j, ExperimentSpec& spec, std::vector<std::string>& errors) {
  Fields f(j, "solver", errors);
  SolverBlock& s = spec.solver;
  f.name_list("solvers", s.solvers, parse_solver);
  if (f.has("eta")) {
    const json& e = j.at("eta");
    if (e.is_string()) {
      if (e.get<std::string>() == "inverse_lipschitz")
        s.eta_inverse_lipschitz = true;
      else
        f.error("eta", "must be > 0 or \"inverse_lipschitz\"");
    } else {
      s.eta_inverse_lipschitz = false;
      f.number("eta", s.eta, positive, "must be > 0");
    }
  }
  f.integer("iters", s.iters, 0);
  f.number("init_scale", s.init_scale, positive, "must be > 0");
  f.number("alpha", s.alpha, positive, "must be > 0");
  f.number("d0", s.d0, nonneg, "must be >= 0");
  f.integer("rank", s.rank, 0);
  f.integer("log_every", s.log_every, 1);
  f.integer("num_sv", s.num_sv, 1);
  f.number("rank_tol", s.rank_tol, open_unit, "must be in (0, 1)");
  f.seed("seed", s.seed);
  if (!spec.problem.signal_csv && s.rank > spec.problem.d) f.error("rank", "must be <= problem d");
  f.finish();
}

void parse_dataset(const json& j, ExperimentSpec& spec, std::vector<std::string>& errors) {
  Fields f(j, "dataset", errors);
  DatasetBlock& ds = spec.dataset;
  f.optional_string("csv", ds.csv);
  f.integer("n", ds.n, 2);
  f.integer("d", ds.d, 1);
  f.integer("c", ds.c, 1);
  f.integer("r_gen", ds.r_gen, 1);
  f.number("noise", ds.noise, nonneg, "must be >= 0");
  f.number("train_fraction", ds.train_fraction, open_unit, "must be in (0, 1)");
  f.seed("seed", ds.seed);
  if (ds.csv) {
    for (const char* key : {"n", "d", "c", "r_gen", "noise"})
      if (j.contains(key)) f.error(key, "cannot be combined with csv");
  } else if (ds.r_gen > std::min(ds.d, ds.c)) {
    f.error("r_gen", "must be <= min(d, c)");
  }
  f.finish();
}

void parse_train(const json& j, ExperimentSpec& spec, std::vector<std::string>& errors) {
  Fields f(j, "train", errors);
  TrainBlock& t = spec.train;
  f.name_list("variants", t.variants, parse_variant);
  f.number("lr", t.lr, positive, "must be > 0");
  f.number("momentum", t.momentum, [](double x) { return x >= 0.0 && x < 1.0; }, "must be in [0, 1)");
  f.integer("batch_size", t.batch_size, 1);
  f.integer("epochs", t.epochs, 0);
  f.integer("hidden", t.hidden, 1);
  f.number("init_std", t.init_std, positive, "must be > 0");
  f.integer("num_sv", t.num_sv, 1);
  f.integer("average_last", t.average_last, 1);
  f.integer("ratio_index", t.ratio_index, 2);
  f.number("rank_tol", t.rank_tol, open_unit, "must be in (0, 1)");
  f.seed("seed", t.seed);
  if (t.ratio_index > t.hidden) f.error("ratio_index", "must be <= hidden");
  f.finish();
}

void parse_prune(const json& j, ExperimentSpec& spec, std::vector<std::string>& errors) {
  Fields f(j, "prune", errors);
  PruneBlock& p = spec.prune;
  if (f.has("rank")) {
    Index r = 0;
    f.integer("rank", r, 1, spec.train.hidden);
    if (r > 0) p.rank = r;
    p.energy.reset();
  }
  if (f.has("energy")) {
    if (j.contains("rank")) {
      f.error("energy", "cannot be combined with rank");
    } else {
      double e = 0.0;
      f.number("energy", e, [](double x) { return x > 0.0 && x <= 1.0; }, "must be in (0, 1]");
      if (e > 0.0) p.energy = e;
    }
  }
  f.finish();
}

std::string format_axis_value(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  for (const auto& k : kKindNames)
    if (k.kind == kind) return k.name;
  return "?";
}

SpecValidation validate_spec_json(const json& j) {
  SpecValidation out;
  std::vector<std::string>& errors = out.errors;
  if (!j.is_object()) {
    errors.push_back("spec must be a JSON object");
    return out;
  }
  ExperimentSpec spec;
  Fields top(j, "", errors);

  std::string kind_name;
  if (!top.has("kind")) {
    errors.push_back("kind is required");
    return out;
  }
  top.string("kind", kind_name);
  std::optional<ExperimentKind> kind = kind_from_string(kind_name);
  if (!kind) {
    errors.push_back("kind must be one of completion, completion-noisy, phase, udv-train, udv-prune, sweep");
    return out;
  }
  spec.kind = *kind;
  top.string("output_dir", spec.output_dir);
  std::optional<std::uint64_t> seed;
  top.seed("seed", seed);
  spec.seed = seed.value_or(0);

  if (spec.kind == ExperimentKind::Sweep) {
    if (!top.has("sweep")) {
      errors.push_back("sweep block is required for kind sweep");
      return out;
    }
    const json& sj = j.at("sweep");
    if (!sj.is_object()) {
      errors.push_back("sweep must be an object");
      return out;
    }
    Fields f(sj, "sweep", errors);
    SweepBlock sw;
    std::string of;
    if (!f.has("of")) {
      f.error("of", "is required");
      return out;
    }
    f.string("of", of);
    std::optional<ExperimentKind> ofk = kind_from_string(of);
    if (!ofk || *ofk == ExperimentKind::Sweep) {
      f.error("of", "must name a non-sweep kind");
      return out;
    }
    sw.of = *ofk;
    if (is_matrix_kind(sw.of)) {
      f.number_list("eta", sw.eta, positive, "must be > 0");
      f.number_list("init_scale", sw.init_scale, positive, "must be > 0");
    } else {
      f.number_list("lr", sw.lr, positive, "must be > 0");
    }
    f.finish();
    if (sw.eta.empty() && sw.init_scale.empty() && sw.lr.empty())
      errors.push_back("sweep: at least one axis must be non-empty");
    spec.sweep = sw;
  } else if (top.has("sweep")) {
    errors.push_back("sweep block is only allowed for kind sweep");
  }

  apply_kind_defaults(spec);
  const ExperimentKind rk = spec.run_kind();
  struct Block {
    const char* name;
    bool allowed;
    void (*parse)(const json&, ExperimentSpec&, std::vector<std::string>&);
  };
  // train before prune: the prune rank bound depends on hidden
  const Block blocks[] = {
      {"problem", is_matrix_kind(rk), parse_problem},
      {"solver", is_matrix_kind(rk), parse_solver_block},
      {"dataset", is_udv_kind(rk), parse_dataset},
      {"train", is_udv_kind(rk), parse_train},
      {"prune", rk == ExperimentKind::UdvPrune, parse_prune},
  };
  for (const Block& b : blocks) {
    if (!top.has(b.name)) continue;
    if (!b.allowed) {
      errors.push_back(std::string("block '") + b.name + "' is not used by kind " + to_string(rk));
      continue;
    }
    const json& bj = j.at(b.name);
    if (!bj.is_object()) {
      errors.push_back(std::string(b.name) + " must be an object");
      continue;
    }
    b.parse(bj, spec, errors);
  }
  top.finish();

  if (errors.empty()) out.spec = std::move(spec);
  return out;
}

SpecValidation validate_spec(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    SpecValidation out;
    out.errors.push_back(std::string("malformed JSON: ") + e.what());
    return out;
  }
  return validate_spec_json(j);
}

SpecValidation validate_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    SpecValidation out;
    out.errors.push_back("cannot open " + path);
    return out;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return validate_spec(ss.str());
}

json ExperimentSpec::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["output_dir"] = output_dir;
  j["seed"] = seed;
  const ExperimentKind rk = run_kind();
  if (sweep) {
    json s;
    s["of"] = to_string(sweep->of);
    if (!sweep->eta.empty()) s["eta"] = sweep->eta;
    if (!sweep->init_scale.empty()) s["init_scale"] = sweep->init_scale;
    if (!sweep->lr.empty()) s["lr"] = sweep->lr;
    j["sweep"] = s;
  }
  if (is_matrix_kind(rk)) {
    json p;
    p["normalize"] = problem.normalize;
    if (problem.seed) p["seed"] = *problem.seed;
    if (rk == ExperimentKind::Phase) {
      if (problem.signal_csv)
        p["signal_csv"] = *problem.signal_csv;
      else
        p["d"] = problem.d;
      p["oversample"] = problem.oversample;
    } else {
      p["d"] = problem.d;
      p["r_true"] = problem.r_true;
      p["n"] = problem.n;
      if (rk == ExperimentKind::CompletionNoisy) {
        p["sigma_rel"] = problem.sigma_rel;
        if (problem.noise_seed) p["noise_seed"] = *problem.noise_seed;
      }
    }
    j["problem"] = p;

    json s;
    std::vector<std::string> names;
    for (SolverKind k : solver.solvers) names.push_back(udufact::to_string(k));
    s["solvers"] = names;
    s["eta"] = solver.eta_inverse_lipschitz ? json("inverse_lipschitz") : json(solver.eta);
    s["iters"] = solver.iters;
    s["init_scale"] = solver.init_scale;
    s["alpha"] = solver.alpha;
    s["d0"] = solver.d0;
    s["rank"] = solver.rank;
    s["log_every"] = solver.log_every;
    s["num_sv"] = solver.num_sv;
    s["rank_tol"] = solver.rank_tol;
    if (solver.seed) s["seed"] = *solver.seed;
    j["solver"] = s;
  }
  if (is_udv_kind(rk)) {
    json d;
    if (dataset.csv) {
      d["csv"] = *dataset.csv;
    } else {
      d["n"] = dataset.n;
      d["d"] = dataset.d;
      d["c"] = dataset.c;
      d["r_gen"] = dataset.r_gen;
      d["noise"] = dataset.noise;
    }
    d["train_fraction"] = dataset.train_fraction;
    if (dataset.seed) d["seed"] = *dataset.seed;
    j["dataset"] = d;

    json t;
    std::vector<std::string> names;
    for (UdvVariant v : train.variants) names.push_back(udufact::to_string(v));
    t["variants"] = names;
    t["lr"] = train.lr;
    t["momentum"] = train.momentum;
    t["batch_size"] = train.batch_size;
    t["epochs"] = train.epochs;
    t["hidden"] = train.hidden;
    t["init_std"] = train.init_std;
    t["num_sv"] = train.num_sv;
    t["average_last"] = train.average_last;
    t["ratio_index"] = train.ratio_index;
    t["rank_tol"] = train.rank_tol;
    if (train.seed) t["seed"] = *train.seed;
    j["train"] = t;
  }
  if (rk == ExperimentKind::UdvPrune) {
    json p;
    if (prune.rank)
      p["rank"] = *prune.rank;
    else
      p["energy"] = prune.energy.value_or(0.999);
    j["prune"] = p;
  }
  return j;
}

std::string ExperimentSpec::hash() const {
  json j = to_json();
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_overrides(ExperimentSpec& spec, const SpecOverrides& o) {
  if (o.output_dir) spec.output_dir = *o.output_dir;
  if (o.seed) {
    spec.seed = *o.seed;
    spec.problem.seed.reset();
    spec.problem.noise_seed.reset();
    spec.solver.seed.reset();
    spec.dataset.seed.reset();
    spec.train.seed.reset();
  }
  if (o.iters) {
    spec.solver.iters = *o.iters;
    spec.train.epochs = static_cast<Index>(*o.iters);
    spec.train.average_last = std::max<Index>(1, std::min(spec.train.average_last, spec.train.epochs));
  }
}

// ---------------------------------------------------------------------------
// Running

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << text;
  if (!out) throw ArgumentError("cannot write " + path.string());
}

template <class Fn>
void write_stream(const fs::path& path, Fn fn) {
  std::ostringstream ss;
  fn(ss);
  write_text(path, ss.str());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_spectrum(const fs::path& path, const Vector& s) {
  write_stream(path, [&](std::ostream& os) { csv::write(os, s, {"sv"}); });
}

std::vector<double> head(const Vector& v, Index k) {
  std::vector<double> out;
  for (Index i = 0; i < std::min(k, v.size()); ++i) out.push_back(v(i));
  return out;
}

json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json base_summary(const ExperimentSpec& spec) {
  json s;
  s["kind"] = to_string(spec.kind);
  s["spec_hash"] = spec.hash();
  s["simd"] = std::string(kernels::isa_name(kernels::active_isa()));
  return s;
}

struct MatrixContext {
  const MeasurementOp& op;
  const MeasurementVec& b;
  const Matrix* x_true;
  const Vector* signal;
  double eta;
  Index ratio_index;  ///< 0-based index of the singular value compared to sv_1
};

json solver_summary(const ExperimentSpec& spec, const MatrixContext& ctx, const SolverResult& res,
                    const SolverConfig& cfg) {
  json s;
  s["iterations_run"] = res.iterations_run;
  s["diverged"] = res.diverged;
  s["warnings"] = res.warnings;
  s["final_objective"] = finite_or_null(res.final_objective);
  s["last_displacement"] = finite_or_null(res.last_displacement);
  s["eta"] = cfg.eta;
  const FactorState& st = res.state;
  if (!st.U.allFinite() || !st.lambda.allFinite()) return s;
  const Matrix x = reconstruct(st);
  if (!x.allFinite()) return s;

  const Vector sv = singular_values(x);
  s["numerical_rank"] = numerical_rank(sv, spec.solver.rank_tol);
  s["rank_tol"] = spec.solver.rank_tol;
  s["svals"] = head(sv, spec.solver.num_sv);
  s["sv_index"] = ctx.ratio_index + 1;
  s["sv_ratio"] = (ctx.ratio_index < sv.size() && sv(0) > 0.0) ? sv(ctx.ratio_index) / sv(0) : 0.0;
  if (ctx.x_true) s["rel_error"] = (x - *ctx.x_true).norm() / ctx.x_true->norm();
  if (ctx.signal) s["correlation"] = abs_correlation(extract_signal(x), *ctx.signal);

  const FactoredEval ev = eval_factored(ctx.op, st.U, st.lambda, ctx.b);
  s["grad_norm"] = adjoint_op(ctx.op, ev.residual).norm();
  if (res.kind == SolverKind::UDU) {
    s["fixed_point"] = fixed_point_report_from_product(st, ev.grad_u, cfg.eta).to_json();
    s["lambda"] = head(st.lambda, st.lambda.size());
  }

  const Vector norms = column_norms(st.U);
  const double nmax = norms.size() ? norms.maxCoeff() : 0.0;
  std::vector<Index> active;
  for (Index j = 0; j < norms.size(); ++j)
    if (norms(j) > 1e-3 * nmax) active.push_back(j);
  s["active_columns"] = active.size();
  s["active_coherence"] = max_pairwise_coherence(st.U, active);
  return s;
}

int run_matrix_solvers(const ExperimentSpec& spec, const fs::path& dir, const MatrixContext& ctx,
                       json& summary) {
  int code = kExitOk;
  json runs = json::object();
  for (SolverKind kind : spec.solver.solvers) {
    const std::string name = to_string(kind);
    SolverConfig cfg;
    cfg.solver = kind;
    cfg.eta = ctx.eta;
    cfg.iters = spec.solver.iters;
    cfg.init_scale = spec.solver.init_scale;
    cfg.seed = spec.solver.seed.value_or(derive_seed(spec.seed, 2));
    cfg.log_every = spec.solver.log_every;
    cfg.rank = spec.solver.rank;
    cfg.alpha = spec.solver.alpha;
    cfg.d0 = spec.solver.d0;
    cfg.num_sv = spec.solver.num_sv;
    try {
      SolverResult res = run_solver(ctx.op, ctx.b, cfg);
      write_stream(dir / ("trace_" + name + ".csv"),
                   [&](std::ostream& os) { write_trace_csv(os, res.trace, cfg.num_sv, kind); });
      if (res.state.U.allFinite()) {
        const Matrix x = reconstruct(res.state);
        if (x.allFinite()) write_spectrum(dir / ("spectrum_" + name + ".csv"), singular_values(x));
      }
      write_json(dir / ("state_" + name + ".json"), state_to_json(res.state, kind));
      runs[name] = solver_summary(spec, ctx, res, cfg);
      runs[name]["seed"] = cfg.seed;
    } catch (const NumericError& e) {
      runs[name] = json{{"error", e.what()}};
      code = kExitNumeric;
    }
  }
  summary["runs"] = runs;
  return code;
}

int run_completion(const ExperimentSpec& spec, const fs::path& dir, json& summary) {
  const ProblemBlock& p = spec.problem;
  const std::uint64_t inst_seed = p.seed.value_or(derive_seed(spec.seed, 0));
  CompletionInstance inst = gen_completion(p.d, p.r_true, p.n, inst_seed);
  const bool noisy = spec.run_kind() == ExperimentKind::CompletionNoisy;
  std::uint64_t noise_seed = 0;
  if (noisy) {
    noise_seed = p.noise_seed.value_or(derive_seed(spec.seed, 1));
    inst.b = perturb_noise(inst.b, p.sigma_rel, noise_seed);
  }
  double scale = 1.0;
  if (p.normalize) {
    const double bn = inst.b.norm();
    require(bn > 0.0, "normalize: measurements are all zero");
    scale = 1.0 / bn;
  }
  inst.b *= scale;
  inst.x_true *= scale;
  inst.u_true *= std::sqrt(scale);

  json ij = inst.to_json();
  ij["scale"] = scale;
  if (noisy) {
    ij["sigma_rel"] = p.sigma_rel;
    ij["noise_seed"] = noise_seed;
  }
  write_json(dir / "instance.json", ij);

  summary["instance_seed"] = inst_seed;
  if (noisy) summary["noise_seed"] = noise_seed;
  summary["scale"] = scale;
  summary["r_true"] = p.r_true;
  const MatrixContext ctx{inst.op, inst.b, &inst.x_true, nullptr, spec.solver.eta, p.r_true};
  return run_matrix_solvers(spec, dir, ctx, summary);
}

int run_phase(const ExperimentSpec& spec, const fs::path& dir, json& summary) {
  const ProblemBlock& p = spec.problem;
  const std::uint64_t inst_seed = p.seed.value_or(derive_seed(spec.seed, 0));
  std::optional<Vector> signal;
  if (p.signal_csv) signal = load_signal_csv(*p.signal_csv);
  PhaseInstance inst =
      gen_phase_retrieval(signal ? signal->size() : p.d, p.oversample, inst_seed, signal);
  double scale = 1.0;
  if (p.normalize) {
    const double bn = inst.b.norm();
    require(bn > 0.0, "normalize: measurements are all zero");
    scale = 1.0 / bn;
  }
  inst.b *= scale;
  json ij = inst.to_json();
  ij["scale"] = scale;
  write_json(dir / "instance.json", ij);

  double eta = spec.solver.eta;
  if (spec.solver.eta_inverse_lipschitz) {
    const double lip = estimate_lipschitz(inst.op);
    summary["lipschitz"] = lip;
    eta = 1.0 / lip;
  }
  summary["instance_seed"] = inst_seed;
  summary["scale"] = scale;
  summary["eta"] = eta;
  const MatrixContext ctx{inst.op, inst.b, nullptr, &inst.x_signal, eta, 1};
  return run_matrix_solvers(spec, dir, ctx, summary);
}

double mean_test_loss(const TrainResult& res, Index last) {
  const Index n = static_cast<Index>(res.trace.size());
  const Index k = std::min(last, n);
  double sum = 0.0;
  for (Index i = n - k; i < n; ++i) sum += res.trace[static_cast<std::size_t>(i)].test_loss;
  return k > 0 ? sum / static_cast<double>(k) : 0.0;
}

int run_udv(const ExperimentSpec& spec, const fs::path& dir, json& summary) {
  const DatasetBlock& ds = spec.dataset;
  const TrainBlock& tb = spec.train;
  const std::uint64_t data_seed = ds.seed.value_or(derive_seed(spec.seed, 0));
  const RegressionDataset data =
      ds.csv ? load_dataset_csv(*ds.csv, data_seed, ds.train_fraction)
             : gen_regression(ds.n, ds.d, ds.c, ds.r_gen, ds.noise, data_seed, ds.train_fraction);
  const Matrix xt = data.x_test();
  const Matrix yt = data.y_test();
  summary["dataset_seed"] = data_seed;

  const bool prune = spec.run_kind() == ExperimentKind::UdvPrune;
  json runs = json::object();
  json pruned = json::object();
  std::optional<Index> reference_width;
  std::string reference_name;
  std::optional<TrainResult> uv_result;

  for (UdvVariant v : tb.variants) {
    const std::string name = to_string(v);
    TrainConfig cfg;
    cfg.lr = tb.lr;
    cfg.momentum = tb.momentum;
    cfg.batch_size = tb.batch_size;
    cfg.epochs = tb.epochs;
    cfg.hidden = tb.hidden;
    cfg.seed = tb.seed.value_or(derive_seed(spec.seed, 2));
    cfg.variant = v;
    cfg.init_std = tb.init_std;
    cfg.num_sv = tb.num_sv;
    TrainResult res = train(data, cfg);

    write_stream(dir / ("trace_" + name + ".csv"),
                 [&](std::ostream& os) { write_epoch_trace_csv(os, res.trace, cfg.num_sv); });
    json s;
    s["seed"] = cfg.seed;
    s["diverged"] = res.diverged;
    s["epochs_run"] = res.trace.size();
    if (!res.trace.empty()) {
      s["train_loss"] = finite_or_null(res.trace.back().train_loss);
      s["test_loss"] = finite_or_null(res.trace.back().test_loss);
      s["test_loss_avg"] = finite_or_null(mean_test_loss(res, tb.average_last));
    }
    if (!res.diverged) {
      write_json(dir / ("params_" + name + ".json"), res.params.to_json());
      const Vector sv = singular_values(layer_product(res.params));
      write_spectrum(dir / ("spectrum_" + name + ".csv"), sv);
      s["svals"] = head(sv, tb.num_sv);
      s["sv_index"] = tb.ratio_index;
      s["sv_ratio"] = sv(0) > 0.0 ? sv(tb.ratio_index - 1) / sv(0) : 0.0;
      s["numerical_rank"] = numerical_rank(sv, tb.rank_tol);
      s["rank_tol"] = tb.rank_tol;
      s["constraint_violation"] = constraint_violation(res.params);
      s["w_min"] = res.params.w.minCoeff();
      s["w_max"] = res.params.w.maxCoeff();

      if (prune) {
        const Index width = spec.prune.rank ? *spec.prune.rank : energy_rank(sv, *spec.prune.energy);
        const UdvParams pp = svd_prune(res.params, PruneKeep{width, std::nullopt});
        write_json(dir / ("pruned_" + name + ".json"), pp.to_json());
        const double before = batch_loss(res.params, xt, yt);
        const double after = batch_loss(pp, xt, yt);
        pruned[name] = json{{"width", width},
                            {"test_loss_before", before},
                            {"test_loss_after", after},
                            {"rel_change", (after - before) / before}};
        if (v != UdvVariant::UV && !reference_width) {
          reference_width = width;
          reference_name = name;
        }
      }
      if (v == UdvVariant::UV) uv_result = res;
    }
    runs[name] = s;
  }
  summary["runs"] = runs;

  if (prune) {
    json pj;
    pj["per_variant"] = pruned;
    if (spec.prune.energy) pj["energy"] = *spec.prune.energy;
    if (spec.prune.rank) pj["rank"] = *spec.prune.rank;
    if (reference_width && uv_result) {
      const UdvParams pp = svd_prune(uv_result->params, PruneKeep{*reference_width, std::nullopt});
      write_json(dir / "pruned_uv_matched.json", pp.to_json());
      const double before = batch_loss(uv_result->params, xt, yt);
      const double after = batch_loss(pp, xt, yt);
      pj["uv_matched"] = json{{"reference", reference_name},
                              {"width", *reference_width},
                              {"test_loss_before", before},
                              {"test_loss_after", after},
                              {"rel_change", (after - before) / before}};
    }
    summary["prune"] = pj;
  }
  return kExitOk;
}

RunOutcome run_single(const ExperimentSpec& spec) {
  const fs::path dir(spec.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ArgumentError("cannot create " + dir.string() + ": " + ec.message());

  RunOutcome out;
  out.summary = base_summary(spec);
  try {
    switch (spec.run_kind()) {
      case ExperimentKind::Completion:
      case ExperimentKind::CompletionNoisy:
        out.exit_code = run_completion(spec, dir, out.summary);
        break;
      case ExperimentKind::Phase:
        out.exit_code = run_phase(spec, dir, out.summary);
        break;
      case ExperimentKind::UdvTrain:
      case ExperimentKind::UdvPrune:
        out.exit_code = run_udv(spec, dir, out.summary);
        break;
      case ExperimentKind::Sweep:
        throw ArgumentError("nested sweep");
    }
  } catch (const NumericError& e) {
    out.summary["error"] = e.what();
    out.exit_code = kExitNumeric;
  }
  write_json(dir / "summary.json", out.summary);
  return out;
}

struct SweepPoint {
  std::string dir;
  json values;
  ExperimentSpec spec;
};

std::vector<SweepPoint> expand_sweep(const ExperimentSpec& spec) {
  const SweepBlock& sw = *spec.sweep;
  std::vector<SweepPoint> points{SweepPoint{"", json::object(), spec}};
  points[0].spec.kind = sw.of;
  points[0].spec.sweep.reset();
  auto expand = [&](const std::string& axis, const std::vector<double>& values, auto set) {
    if (values.empty()) return;
    std::vector<SweepPoint> next;
    for (const SweepPoint& p : points) {
      for (double x : values) {
        SweepPoint q = p;
        q.dir += (q.dir.empty() ? "" : "_") + axis + "-" + format_axis_value(x);
        q.values[axis] = x;
        set(q.spec, x);
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  };
  expand("eta", sw.eta, [](ExperimentSpec& s, double x) {
    s.solver.eta = x;
    s.solver.eta_inverse_lipschitz = false;
  });
  expand("init_scale", sw.init_scale, [](ExperimentSpec& s, double x) { s.solver.init_scale = x; });
  expand("lr", sw.lr, [](ExperimentSpec& s, double x) { s.train.lr = x; });
  for (SweepPoint& p : points) p.spec.output_dir = (fs::path(spec.output_dir) / p.dir).string();
  return points;
}

unsigned sweep_threads(std::size_t points) {
  unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("UDUFACT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) cap = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::min<std::size_t>(cap, points));
}

RunOutcome run_sweep(const ExperimentSpec& spec) {
  const fs::path dir(spec.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ArgumentError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<SweepPoint> points = expand_sweep(spec);
  std::vector<RunOutcome> results(points.size());
  std::vector<std::string> failures(points.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      try {
        results[i] = run_single(points[i].spec);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  const unsigned nthreads = sweep_threads(points.size());
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (const std::string& f : failures)
    if (!f.empty()) throw ArgumentError(f);

  RunOutcome out;
  out.summary = base_summary(spec);
  out.summary["of"] = to_string(spec.sweep->of);
  json list = json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    list.push_back(json{{"dir", points[i].dir},
                        {"values", points[i].values},
                        {"exit_code", results[i].exit_code},
                        {"summary", results[i].summary}});
    out.exit_code = std::max(out.exit_code, results[i].exit_code);
  }
  out.summary["points"] = list;
  write_json(dir / "summary.json", out.summary);
  return out;
}

}  // namespace

RunOutcome run_experiment(const ExperimentSpec& spec) {
  return spec.sweep ? run_sweep(spec) : run_single(spec);
}

std::string spectrum_csv_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ArgumentError(path + ": malformed JSON: " + e.what());
  }
  const std::string format = j.is_object() ? j.value("format", "") : "";
  Vector sv;
  if (format == "udufact-state") {
    sv = singular_values(reconstruct(state_from_json(j)));
  } else if (format == "udufact-udv") {
    sv = singular_values(layer_product(UdvParams::from_json(j)));
  } else {
    throw ArgumentError(path + ": not a saved solver state or network");
  }
  Matrix table(sv.size(), 2);
  for (Index i = 0; i < sv.size(); ++i) {
    table(i, 0) = static_cast<double>(i + 1);
    table(i, 1) = sv(i);
  }
  std::ostringstream os;
  csv::write(os, table, {"index", "sv"});
  return os.str();
}

}  // namespace udufact
