#include "sfmm/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "sfmm/diagnostics.hpp"
#include "sfmm/io.hpp"

namespace sfmm {

using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

[[noreturn]] void config_fail(const std::string& message) { fail("invalid_config", message); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_fail("'" + where + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) config_fail("unknown key '" + k + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    config_fail(std::string("key '") + key + "' has the wrong type");
  }
}

Boundary boundary_of(const std::string& s) {
  if (s == "periodic") return Boundary::periodic;
  if (s == "reflection") return Boundary::reflection;
  config_fail("unknown boundary '" + s + "'");
}

std::string boundary_name(Boundary b) { return b == Boundary::periodic ? "periodic" : "reflection"; }

Criterion criterion_of(const std::string& s) {
  if (s == "abic") return Criterion::abic;
  if (s == "aaic") return Criterion::aaic;
  config_fail("unknown criterion '" + s + "'");
}

ModelSpec formula_of(const std::string& text, const std::string& where) {
  try {
    return parse_formula(text);
  } catch (const Error& e) {
    config_fail(where + ": " + e.what());
  }
}

std::vector<CandidateModel> candidates_of(const json& list, const std::string& where) {
  std::vector<CandidateModel> out;
  if (!list.is_array()) config_fail("'" + where + "' must be a list");
  std::set<std::string> ids;
  for (const json& c : list) {
    check_keys(c, where, {"id", "formula"});
    CandidateModel m;
    read(c, "formula", m.id);
    const std::string formula = m.id;
    m.id = c.value("id", formula);
    if (formula.empty()) config_fail(where + " entry needs a formula");
    if (!ids.insert(m.id).second) config_fail("duplicate candidate id '" + m.id + "'");
    m.spec = formula_of(formula, where + " '" + m.id + "'");
    out.push_back(std::move(m));
  }
  return out;
}

json candidates_json(const std::vector<CandidateModel>& cs) {
  json out = json::array();
  for (const auto& c : cs) out.push_back({{"id", c.id}, {"formula", c.spec.to_string()}});
  return out;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == ')') continue;
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-')
      out.push_back(c);
    else if (!out.empty() && out.back() != '_')
      out.push_back('_');
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out.empty() ? "term" : out;
}

std::string num(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::string key_of(std::initializer_list<std::string> parts) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : parts) {
    h = fnv1a(p.data(), p.size(), h);
    h = fnv1a("\0", 1, h);
  }
  return hex64(h);
}

// ---- run context ----

struct Context {
  RunConfig cfg;
  fs::path out;
  bool warned = false;

  fs::path stage_dir(const std::string& stage) const { return out / stage; }
  fs::path dataset_manifest() const {
    if (cfg.dataset.empty()) return out / "simulate" / "dataset" / "manifest.json";
    const fs::path p(cfg.dataset);
    return p.is_absolute() ? p : cfg.base_dir / p;
  }
  void log(const std::string& stage, const std::string& msg) const { std::cerr << "[" << stage << "] " << msg << '\n'; }
  void warn(const std::string& stage, const std::string& msg) {
    warned = true;
    std::cerr << "[" << stage << "] warning: " << msg << '\n';
  }
};

json read_json(const fs::path& p) {
  if (!fs::exists(p)) fail("missing_upstream", p.string() + " does not exist");
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    fail("invalid_file", p.string() + ": " + e.what());
  }
}

std::string dataset_checksum(const fs::path& manifest) {
  if (!fs::exists(manifest)) fail("missing_file", "dataset manifest " + manifest.string() + " does not exist");
  const json m = read_json(manifest);
  std::uint64_t h = file_checksum(manifest);
  std::vector<std::string> files;
  if (m.contains("container")) files.push_back(m.at("container").get<std::string>());
  if (m.contains("functions"))
    for (const json& f : m.at("functions"))
      if (f.contains("file")) files.push_back(f.at("file").get<std::string>());
  for (const auto& f : files) {
    const fs::path p = manifest.parent_path() / f;
    if (!fs::exists(p)) fail("missing_file", "dataset file " + p.string() + " does not exist");
    const std::uint64_t c = file_checksum(p);
    h = fnv1a(&c, sizeof c, h);
  }
  return hex64(h);
}

std::string stage_key(Context& ctx, const std::string& stage);

std::string resolved_formula(Context& ctx) {
  if (ctx.cfg.formula != "selected") return ctx.cfg.formula;
  const json sel = read_json(ctx.stage_dir("select") / "selection.json");
  return sel.at("best").at("formula").get<std::string>();
}

std::string stage_key(Context& ctx, const std::string& stage) {
  const RunConfig& c = ctx.cfg;
  const json cj = json::parse(canonical_config(c));
  if (stage == "simulate") return key_of({"simulate", cj.at("simulate").dump(), std::to_string(c.seed)});
  if (stage == "transform")
    return key_of({"transform", dataset_checksum(ctx.dataset_manifest()), cj.at("wavelet").dump(), cj.at("basis").dump()});
  if (stage == "select")
    return key_of({"select", stage_key(ctx, "transform"), cj.at("selection").dump(), c.serial_variable});
  if (stage == "fit") {
    const std::string upstream = c.formula == "selected" ? stage_key(ctx, "select") : stage_key(ctx, "transform");
    return key_of({"fit", upstream, resolved_formula(ctx), cj.at("chain").dump(), c.serial_variable, std::to_string(c.seed)});
  }
  if (stage == "infer") return key_of({"infer", stage_key(ctx, "fit"), cj.at("inference").dump()});
  if (stage == "diagnose") return key_of({"diagnose", stage_key(ctx, "fit")});
  fail("unknown_stage", stage);
}

void verify_upstream(Context& ctx, const std::string& stage) {
  const fs::path mp = ctx.stage_dir(stage) / "manifest.json";
  if (!fs::exists(mp)) fail("missing_upstream", "stage '" + stage + "' has not been run (no " + mp.string() + ")");
  const json m = read_json(mp);
  if (m.at("key").get<std::string>() != stage_key(ctx, stage))
    fail("stale_upstream", "stage '" + stage + "' outputs were produced from a different configuration or input; rerun it");
  for (const auto& [rel, hex] : m.at("outputs").items()) {
    const fs::path p = ctx.stage_dir(stage) / rel;
    if (!fs::exists(p) || hex64(file_checksum(p)) != hex.get<std::string>())
      fail("stale_upstream", "output " + p.string() + " of stage '" + stage + "' is missing or modified; rerun it");
  }
}

void finish_stage(Context& ctx, const std::string& stage, const std::string& key, const std::vector<std::string>& outputs,
                  Clock::time_point start, json extra = json::object()) {
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  json m;
  m["stage"] = stage;
  m["software_version"] = kSoftwareVersion;
  m["key"] = key;
  m["seed"] = ctx.cfg.seed;
  m["seconds"] = seconds;
  m["outputs"] = json::object();
  for (const auto& rel : outputs) m["outputs"][rel] = hex64(file_checksum(ctx.stage_dir(stage) / rel));
  m["details"] = std::move(extra);
  write_atomic(ctx.stage_dir(stage) / "manifest.json", m.dump(1) + "\n");

  const fs::path run = ctx.out / "run_manifest.json";
  json r = fs::exists(run) ? read_json(run) : json::object();
  r["software_version"] = kSoftwareVersion;
  r["config_hash"] = key_of({canonical_config(ctx.cfg)});
  r["master_seed"] = ctx.cfg.seed;
  if (fs::exists(ctx.dataset_manifest())) r["inputs"] = {{ctx.dataset_manifest().string(), dataset_checksum(ctx.dataset_manifest())}};
  r["stages"][stage] = {{"key", key}, {"seconds", seconds}, {"seed", ctx.cfg.seed}};
  write_atomic(run, r.dump(1) + "\n");
  ctx.log(stage, "done in " + num(seconds) + " s");
}

// ---- records ----

json records_json(const std::vector<FunctionRecord>& recs) {
  json a = json::array();
  for (const auto& r : recs) {
    json f = {{"id", r.id}, {"subject", r.subject_id}, {"unit", r.unit_id}, {"serial_level", r.serial_level}};
    f["covariates"] = r.covariates;
    a.push_back(std::move(f));
  }
  return a;
}

std::vector<FunctionRecord> records_of(const json& a) {
  std::vector<FunctionRecord> out;
  for (const json& f : a) {
    FunctionRecord r;
    r.id = f.at("id").get<std::string>();
    r.subject_id = f.at("subject").get<std::string>();
    r.unit_id = f.at("unit").get<std::string>();
    r.serial_level = f.at("serial_level").get<double>();
    r.covariates = f.at("covariates").get<std::map<std::string, double>>();
    out.push_back(std::move(r));
  }
  return out;
}

struct TransformOutputs {
  BasisSystem basis;
  Matrix coefficients;
  std::vector<FunctionRecord> records;
};

TransformOutputs load_transform(Context& ctx) {
  verify_upstream(ctx, "transform");
  const fs::path d = ctx.stage_dir("transform");
  return {read_basis(d / "basis.bin"), read_matrix(d / "coefficients.bin"), records_of(read_json(d / "records.json"))};
}

AssembleOptions assemble_options(const RunConfig& c) {
  AssembleOptions o;
  o.serial_variable = c.serial_variable;
  return o;
}

// ---- stages ----

void run_simulate(Context& ctx) {
  const auto start = Clock::now();
  const std::string key = stage_key(ctx, "simulate");
  SyntheticStudyOptions o = ctx.cfg.simulate;
  o.seed = ctx.cfg.seed;
  o.workers = ctx.cfg.workers;
  ctx.log("simulate", "generating " + std::to_string(o.grid.n_meridional) + "x" + std::to_string(o.grid.n_circumferential) +
                          " pseudo-data");
  const SyntheticStudy st = synthetic_study(o);
  const fs::path dir = ctx.stage_dir("simulate");
  write_dataset(st.data, dir / "dataset", DatasetLayout::container);
  Matrix truth(st.truth.beta.rows(), static_cast<Index>(st.basis.grid().size()));
  for (Index a = 0; a < truth.rows(); ++a) {
    const Matrix s = st.basis.synthesize(st.truth.beta.row(a).transpose());
    truth.row(a) = Eigen::Map<const Vector>(s.data(), s.size()).transpose();
  }
  write_matrix(dir / "truth_fixed.bin", truth);
  write_matrix(dir / "truth_beta.bin", st.truth.beta);
  write_matrix(dir / "truth_variance.bin", st.truth.variance);
  write_basis(dir / "truth_basis.bin", st.basis);
  json t;
  t["formula"] = st.model.to_string();
  t["fixed_names"] = st.design.x_names;
  std::vector<std::string> vn;
  for (const auto& b : st.design.blocks) vn.push_back(b.name);
  vn.push_back("residual");
  t["variance_names"] = vn;
  write_atomic(dir / "truth.json", t.dump(1) + "\n");
  finish_stage(ctx, "simulate", key,
               {"dataset/manifest.json", "dataset/values.bin", "truth_fixed.bin", "truth_beta.bin", "truth_variance.bin",
                "truth_basis.bin", "truth.json"},
               start);
}

void run_transform(Context& ctx) {
  const auto start = Clock::now();
  const std::string key = stage_key(ctx, "transform");
  const RunConfig& c = ctx.cfg;
  const FunctionalDataset data = read_dataset(ctx.dataset_manifest());
  const DatasetSummary summary = summarize(data);
  std::cerr << summary.to_string();
  BasisBuildReport rep = build_wavelet_basis(data, c.wavelet, c.spike_ratio, c.compression_threshold, c.workers);
  for (const auto& w : rep.spikes.warnings) ctx.warn("transform", w);
  BasisSystem basis = rep.basis;
  Matrix coeffs = rep.coefficients;
  json details;
  if (c.basis == "pc") {
    PcResult pc = pc_basis(rep.basis, rep.coefficients, c.pc_threshold);
    basis = pc.basis;
    coeffs = rep.coefficients * basis.rotation();
    details["pc_components"] = basis.size();
  }
  const Vector err = reconstruction_error(data, basis, coeffs);
  const fs::path dir = ctx.stage_dir("transform");
  write_basis(dir / "basis.bin", basis);
  write_matrix(dir / "coefficients.bin", coeffs);
  write_atomic(dir / "records.json", records_json(data.records).dump() + "\n");
  details["functions"] = summary.functions;
  details["full_size"] = rep.full_size;
  details["retained"] = rep.basis.retained_size();
  details["size"] = basis.size();
  details["compression_ratio"] = rep.compression.compression_ratio;
  details["retained_energy_min"] = rep.compression.retained_fraction.minCoeff();
  details["retained_energy_mean"] = rep.compression.retained_fraction.mean();
  details["spikes_dropped"] = rep.spikes.dropped.size();
  details["max_relative_reconstruction_error"] = err.maxCoeff();
  write_atomic(dir / "report.json", details.dump(1) + "\n");
  ctx.log("transform", "K = " + std::to_string(basis.size()) + " of " + std::to_string(rep.full_size) +
                           ", compression " + num(rep.compression.compression_ratio) + ":1");
  finish_stage(ctx, "transform", key, {"basis.bin", "coefficients.bin", "records.json", "report.json"}, start, details);
}

json report_json(const SelectionReport& r, const std::vector<CandidateModel>& cands) {
  json j;
  j["stage"] = to_string(r.stage);
  j["criterion"] = to_string(r.criterion);
  j["best"] = r.ids[r.best()];
  j["candidates"] = json::array();
  for (std::size_t c = 0; c < r.ids.size(); ++c) {
    const int wins = static_cast<int>(std::count(r.winners.begin(), r.winners.end(), static_cast<int>(c)));
    j["candidates"].push_back(
        {{"id", r.ids[c]}, {"formula", cands[c].spec.to_string()}, {"probability", r.probability[c]}, {"wins", wins}});
  }
  j["warnings"] = r.warnings;
  return j;
}

std::string report_table(const SelectionReport& r, const std::vector<CandidateModel>& cands) {
  std::ostringstream o;
  o << to_string(r.stage) << " selection by " << to_string(r.criterion) << "\n";
  o << std::left << std::setw(12) << "model" << std::setw(12) << "P_c" << std::setw(8) << "wins" << "formula\n";
  for (std::size_t c = 0; c < r.ids.size(); ++c) {
    const int wins = static_cast<int>(std::count(r.winners.begin(), r.winners.end(), static_cast<int>(c)));
    o << std::left << std::setw(12) << r.ids[c] << std::setw(12) << std::fixed << std::setprecision(4) << r.probability[c]
      << std::setw(8) << wins << cands[c].spec.to_string() << (c == r.best() ? "  *" : "") << "\n";
  }
  return o.str();
}

void run_select(Context& ctx) {
  const auto start = Clock::now();
  const RunConfig& c = ctx.cfg;
  const TransformOutputs t = load_transform(ctx);
  const std::string key = stage_key(ctx, "select");
  const Vector& weights = t.basis.weights();
  json out;
  std::string table;
  out["procedure"] = c.procedure;
  if (c.procedure == "two_step") {
    if (c.fixed_candidates.empty() || c.random_candidates.empty())
      config_fail("two_step selection needs fixed_candidates and random_candidates");
    TwoStepOptions o;
    o.criterion = c.criterion;
    o.baseline_random = formula_of(c.baseline_random, "baseline_random");
    o.workers = c.workers;
    o.assemble = assemble_options(c);
    const TwoStepResult r = two_step_select(c.fixed_candidates, c.random_candidates, t.coefficients, t.records, weights, o);
    out["reports"] = {report_json(r.fixed_report, c.fixed_candidates), report_json(r.random_report, c.random_candidates)};
    out["best"] = {{"id", r.best_fixed.id + "+" + r.best_random.id}, {"formula", r.model.to_string()}};
    table = report_table(r.fixed_report, c.fixed_candidates) + "\n" + report_table(r.random_report, c.random_candidates);
    for (const auto* rep : {&r.fixed_report, &r.random_report})
      for (const auto& w : rep->warnings) ctx.warn("select", w);
  } else {
    if (c.candidates.empty()) config_fail("selection needs a candidate list");
    ScoreOptions o;
    o.workers = c.workers;
    o.assemble = assemble_options(c);
    const SelectionReport r = select_models(t.coefficients, t.records, c.candidates, weights, c.criterion,
                                            SelectionStage::joint, o);
    out["reports"] = {report_json(r, c.candidates)};
    out["best"] = {{"id", r.ids[r.best()]}, {"formula", c.candidates[r.best()].spec.to_string()}};
    table = report_table(r, c.candidates);
    for (const auto& w : r.warnings) ctx.warn("select", w);
  }
  const fs::path dir = ctx.stage_dir("select");
  write_atomic(dir / "selection.json", out.dump(1) + "\n");
  write_atomic(dir / "selection.txt", table);
  std::cout << table;
  finish_stage(ctx, "select", key, {"selection.json", "selection.txt"}, start);
}

std::string posterior_name(std::size_t k) {
  std::ostringstream s;
  s << "posterior/k" << std::setw(6) << std::setfill('0') << k << ".bin";
  return s.str();
}

void run_fit(Context& ctx) {
  const auto start = Clock::now();
  const RunConfig& c = ctx.cfg;
  if (c.formula.empty()) config_fail("fit needs a model formula");
  if (c.formula == "selected") verify_upstream(ctx, "select");
  const TransformOutputs t = load_transform(ctx);
  const std::string key = stage_key(ctx, "fit");
  const std::string formula = resolved_formula(ctx);
  const DesignBundle design = assemble(t.records, parse_formula(formula), assemble_options(c));
  const std::size_t k_count = static_cast<std::size_t>(t.coefficients.cols());
  ctx.log("fit", "model " + formula + ", " + std::to_string(k_count) + " coefficients");

  const InitialFits init = initial_fits(t.coefficients, design, c.workers);
  for (const auto& w : init.warnings) ctx.warn("fit", w);
  const ShrinkageHyper hyper = empirical_bayes(init.bhat, init.v, regularization_sets(t.basis));
  ChainConfig chain = c.chain;
  chain.seed = c.seed;

  const fs::path dir = ctx.stage_dir("fit");
  const fs::path progress_path = dir / "progress.json";
  json progress = {{"key", key}, {"done", json::object()}};
  if (fs::exists(progress_path)) {
    const json old = read_json(progress_path);
    if (old.value("key", "") == key) {
      for (const auto& [name, hex] : old.at("done").items())
        if (fs::exists(dir / name) && hex64(file_checksum(dir / name)) == hex.get<std::string>()) progress["done"][name] = hex;
      ctx.log("fit", "resuming with " + std::to_string(progress["done"].size()) + " coefficients already sampled");
    }
  }
  std::vector<std::size_t> todo;
  for (std::size_t k = 0; k < k_count; ++k)
    if (!progress["done"].contains(posterior_name(k))) todo.push_back(k);

  std::vector<std::string> failures;
  const std::size_t batch = std::max<std::size_t>(1, c.batch);
  for (std::size_t i = 0; i < todo.size(); i += batch) {
    const std::vector<std::size_t> idx(todo.begin() + i, todo.begin() + std::min(todo.size(), i + batch));
    const auto results = run_all(t.coefficients, design, hyper, init.starts, chain, c.workers, idx);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (!results[j].posterior) {
        failures.push_back("coefficient " + std::to_string(idx[j]) + ": " + results[j].error);
        continue;
      }
      const std::string name = posterior_name(idx[j]);
      write_posterior(dir / name, *results[j].posterior);
      progress["done"][name] = hex64(file_checksum(dir / name));
    }
    write_atomic(progress_path, progress.dump() + "\n");
    ctx.log("fit", std::to_string(progress["done"].size()) + "/" + std::to_string(k_count) + " coefficients");
  }

  json summary;
  summary["formula"] = formula;
  summary["coefficients"] = k_count;
  summary["draws"] = c.chain.n_keep / std::max(1, c.chain.thin);
  summary["fixed_names"] = design.x_names;
  summary["hyper_pi"] = std::vector<double>(hyper.pi.data(), hyper.pi.data() + hyper.pi.size());
  summary["hyper_tau"] = std::vector<double>(hyper.tau.data(), hyper.tau.data() + hyper.tau.size());
  summary["hyper_sets"] = hyper.pi.cols();
  summary["failures"] = failures;
  summary["warnings"] = init.warnings;
  write_atomic(dir / "summary.json", summary.dump(1) + "\n");
  if (!failures.empty()) {
    for (const auto& f : failures) std::cerr << "[fit] " << f << '\n';
    throw Error(ErrorKind::numerical, "chain_failed", std::to_string(failures.size()) + " chains failed; see fit/summary.json");
  }
  std::vector<std::string> outputs = {"summary.json"};
  for (std::size_t k = 0; k < k_count; ++k) outputs.push_back(posterior_name(k));
  finish_stage(ctx, "fit", key, outputs, start);
}

std::vector<CoefficientPosterior> load_posteriors(Context& ctx, std::size_t k_count) {
  verify_upstream(ctx, "fit");
  std::vector<CoefficientPosterior> out;
  out.reserve(k_count);
  for (std::size_t k = 0; k < k_count; ++k) out.push_back(read_posterior(ctx.stage_dir("fit") / posterior_name(k)));
  return out;
}

void run_diagnose(Context& ctx) {
  const auto start = Clock::now();
  const TransformOutputs t = load_transform(ctx);
  const auto post = load_posteriors(ctx, static_cast<std::size_t>(t.coefficients.cols()));
  const std::string key = stage_key(ctx, "diagnose");
  std::map<std::string, std::pair<double, double>> acc;
  std::size_t tested = 0, rejected = 0, chain_warnings = 0;
  double min_ess = std::numeric_limits<double>::infinity();
  for (const auto& p : post) {
    for (Index h = 0; h < p.acceptance.size(); ++h) {
      auto [it, fresh] = acc.try_emplace(p.variance_names[h], p.acceptance[h], p.acceptance[h]);
      if (!fresh) it->second = {std::min(it->second.first, p.acceptance[h]), std::max(it->second.second, p.acceptance[h])};
    }
    for (Index i = 0; i < p.geweke_p.size(); ++i) {
      if (!std::isfinite(p.geweke_p[i])) continue;
      ++tested;
      if (p.geweke_p[i] < 0.05) ++rejected;
    }
    if (p.ess.size()) min_ess = std::min(min_ess, p.ess.minCoeff());
    chain_warnings += p.warnings.size();
  }
  json d;
  d["coefficients"] = post.size();
  d["draws"] = post.empty() ? 0 : post.front().draws();
  d["geweke_tested"] = tested;
  d["geweke_fraction_below_0.05"] = tested ? static_cast<double>(rejected) / tested : 0.0;
  d["min_ess"] = std::isfinite(min_ess) ? min_ess : 0.0;
  d["chain_warnings"] = chain_warnings;
  bool acceptance_ok = true;
  for (const auto& [name, r] : acc) {
    d["acceptance"][name] = {{"min", r.first}, {"max", r.second}};
    if (r.first < 0.2 || r.second > 0.97) acceptance_ok = false;
  }
  d["acceptance_in_range"] = acceptance_ok;
  const fs::path dir = ctx.stage_dir("diagnose");
  write_atomic(dir / "diagnostics.json", d.dump(1) + "\n");
  std::cout << d.dump(1) << '\n';
  if (!acceptance_ok) ctx.warn("diagnose", "MH acceptance outside [0.2, 0.97]");
  if (tested && static_cast<double>(rejected) / tested >= 0.1) ctx.warn("diagnose", "Geweke rejection fraction >= 10%");
  if (chain_warnings) ctx.warn("diagnose", std::to_string(chain_warnings) + " chain warnings");
  finish_stage(ctx, "diagnose", key, {"diagnostics.json"}, start, d);
}

std::vector<CoefficientPosterior> thinned(const std::vector<CoefficientPosterior>& post, std::size_t max_draws) {
  if (post.empty() || post.front().draws() <= max_draws) return post;
  const std::size_t g = post.front().draws();
  std::vector<Index> rows;
  for (std::size_t i = 0; i < max_draws; ++i) rows.push_back(static_cast<Index>(i * g / max_draws));
  std::vector<CoefficientPosterior> out = post;
  for (auto& p : out) {
    p.b = p.b(rows, Eigen::all).eval();
    p.variance = p.variance(rows, Eigen::all).eval();
    for (auto& u : p.spline) u = u(rows, Eigen::all).eval();
  }
  return out;
}

void run_infer(Context& ctx) {
  const auto start = Clock::now();
  const RunConfig& c = ctx.cfg;
  const TransformOutputs t = load_transform(ctx);
  const auto post = load_posteriors(ctx, static_cast<std::size_t>(t.coefficients.cols()));
  const std::string key = stage_key(ctx, "infer");
  const std::string formula = resolved_formula(ctx);
  const ModelSpec spec = parse_formula(formula);
  const DesignBundle design = assemble(t.records, spec, assemble_options(c));
  const BasisSystem& basis = t.basis;
  const SurfaceGrid& grid = basis.grid();
  const auto all = basis.all_locations();
  const Matrix psi = basis.basis_rows(all);
  const fs::path dir = ctx.stage_dir("infer");
  std::vector<std::string> outputs;
  json coverage = json::object();

  auto emit_surface = [&](const Matrix& coeff_draws, const std::string& name) {
    PosteriorSurface s;
    s.label = name;
    s.locations = all;
    s.draws = coeff_draws * psi;
    const BandSummary b = joint_band(s, c.alpha);
    write_band_csv(dir / (name + ".csv"), b, all, grid);
    outputs.push_back(name + ".csv");
    if (c.png) {
      write_png_heatmap(dir / (name + ".png"), b.mean, grid);
      outputs.push_back(name + ".png");
    }
  };
  auto emit_table = [&](const std::string& name, const std::string& keyname, const std::vector<double>& keys,
                        const Matrix& draws) {
    PosteriorSurface s;
    s.label = name;
    s.locations.resize(keys.size());
    s.draws = draws;
    write_band_table(dir / (name + ".csv"), keyname, keys, joint_band(s, c.alpha));
    outputs.push_back(name + ".csv");
  };

  for (const auto& name : design.x_names) emit_surface(coefficient_draws(post, name), "fixed_" + sanitize(name));

  std::vector<std::pair<std::string, Vector>> regions;
  for (const auto& r : c.regions) regions.emplace_back(r.name, region_coefficient_weights(basis, r.region));

  std::set<double> level_set;
  for (const auto& r : t.records) level_set.insert(r.serial_level);
  const std::vector<double> levels(level_set.begin(), level_set.end());

  std::optional<SerialBasis> serial;
  std::string serial_label;
  for (const auto& f : spec.fixed)
    if (f.kind == FixedTerm::Kind::serial) {
      serial = make_serial_basis(f.serial_kind, levels);
      serial_label = f.label();
      break;
    }

  for (std::size_t ti = 0; ti < design.np_terms.size(); ++ti) {
    const NonparametricTerm& term = design.np_terms[ti];
    const std::string label = sanitize(term.label);
    const double lo = c.age_min.value_or(term.def.lower), hi = c.age_max.value_or(term.def.upper);
    const std::vector<double> ages = covariate_grid(lo, hi, c.age_points);
    for (const auto& [rname, w] : regions) {
      Matrix f(post.front().draws(), static_cast<Index>(ages.size()));
      Matrix auc = f, deriv = f;
      for (std::size_t a = 0; a < ages.size(); ++a) {
        f.col(static_cast<Index>(a)) = np_coefficient_draws(post, design, ti, ages[a], ages) * w;
        deriv.col(static_cast<Index>(a)) = np_derivative_draws(post, design, ti, ages[a]) * w;
        if (serial)
          auc.col(static_cast<Index>(a)) =
              auc_coefficient_draws(post, design, ti, *serial, serial_label, ages[a], ages, c.auc_lo, c.auc_hi) * w;
      }
      emit_table(label + "_" + sanitize(rname), "age", ages, f);
      emit_table(label + "_derivative_" + sanitize(rname), "age", ages, deriv);
      if (serial) emit_table("auc_" + label + "_" + sanitize(rname), "age", ages, auc);
    }
    std::vector<double> at = c.surface_ages;
    if (at.empty()) at = {lo + 0.25 * (hi - lo), lo + 0.5 * (hi - lo), lo + 0.75 * (hi - lo)};
    for (double x : at) {
      const std::string suffix = "_age" + num(x);
      emit_surface(np_coefficient_draws(post, design, ti, x, ages), label + suffix);
      emit_surface(np_derivative_draws(post, design, ti, x), label + "_derivative" + suffix);
      if (serial)
        emit_surface(auc_coefficient_draws(post, design, ti, *serial, serial_label, x, ages, c.auc_lo, c.auc_hi),
                     "auc_" + label + suffix);
    }
    const auto few = thinned(post, c.df_draws);
    const PosteriorSurface df = df_map(few, design, ti, basis, all);
    const BandSummary b = joint_band(df, c.alpha);
    write_band_csv(dir / ("df_" + label + ".csv"), b, all, grid);
    outputs.push_back("df_" + label + ".csv");
    if (c.png) {
      write_png_heatmap(dir / ("df_" + label + ".png"), b.mean, grid);
      outputs.push_back("df_" + label + ".png");
    }
  }

  for (const RandomTerm& r : spec.random) {
    if (r.kind == SerialKind::constant) continue;
    const SerialBasis g = make_serial_basis(r.kind, levels);
    std::vector<int> blocks;
    for (const auto& n : g.column_names()) blocks.push_back(design.block_index(r.grouping + ":" + n));
    const int resid = static_cast<int>(design.blocks.size());
    for (const auto& [rname, w] : regions) {
      const Index gd = static_cast<Index>(post.front().draws());
      Matrix mean = Matrix::Zero(static_cast<Index>(levels.size()), static_cast<Index>(levels.size()));
      for (Index d = 0; d < gd; ++d) {
        std::vector<double> q(blocks.size(), 0.0);
        double s = 0.0;
        for (std::size_t k = 0; k < post.size(); ++k) {
          const double w2 = w[static_cast<Index>(k)] * w[static_cast<Index>(k)];
          for (std::size_t j = 0; j < blocks.size(); ++j) q[j] += w2 * post[k].variance(d, blocks[j]);
          s += w2 * post[k].variance(d, resid);
        }
        mean += serial_correlation(g, q, s, levels);
      }
      mean /= static_cast<double>(gd);
      std::ostringstream o;
      o << "level";
      for (double l : levels) o << ',' << l;
      o << '\n' << std::setprecision(17);
      for (Index i = 0; i < mean.rows(); ++i) {
        o << levels[i];
        for (Index j = 0; j < mean.cols(); ++j) o << ',' << mean(i, j);
        o << '\n';
      }
      const std::string name = "serial_correlation_" + sanitize(r.grouping) + "_" + sanitize(rname) + ".csv";
      write_atomic(dir / name, o.str());
      outputs.push_back(name);
    }
  }
  std::sort(outputs.begin(), outputs.end());
  ctx.log("infer", std::to_string(outputs.size()) + " outputs");
  finish_stage(ctx, "infer", key, outputs, start);
}

void run_all_stages(Context& ctx) {
  if (ctx.cfg.dataset.empty()) run_simulate(ctx);
  run_transform(ctx);
  const bool selecting = !ctx.cfg.candidates.empty() || !ctx.cfg.fixed_candidates.empty();
  if (selecting) run_select(ctx);
  run_fit(ctx);
  run_diagnose(ctx);
  run_infer(ctx);
}

}  // namespace

// ---- configuration ----

RunConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    config_fail(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  c.base_dir = base_dir;
  check_keys(j, "config", {"dataset", "seed", "workers", "output_dir", "strict", "wavelet", "basis", "model", "selection",
                           "chain", "inference", "simulate"});
  read(j, "dataset", c.dataset);
  read(j, "seed", c.seed);
  read(j, "workers", c.workers);
  read(j, "output_dir", c.output_dir);
  read(j, "strict", c.strict);
  if (j.contains("wavelet")) {
    const json& w = j["wavelet"];
    check_keys(w, "wavelet", {"filter", "levels", "boundary_meridional", "boundary_circumferential"});
    read(w, "filter", c.wavelet.filter);
    read(w, "levels", c.wavelet.levels);
    std::string bm = boundary_name(c.wavelet.boundary_meridional), bc = boundary_name(c.wavelet.boundary_circumferential);
    read(w, "boundary_meridional", bm);
    read(w, "boundary_circumferential", bc);
    c.wavelet.boundary_meridional = boundary_of(bm);
    c.wavelet.boundary_circumferential = boundary_of(bc);
  }
  if (j.contains("basis")) {
    const json& b = j["basis"];
    check_keys(b, "basis", {"type", "compression_threshold", "spike_ratio", "pc_threshold"});
    read(b, "type", c.basis);
    read(b, "compression_threshold", c.compression_threshold);
    read(b, "spike_ratio", c.spike_ratio);
    read(b, "pc_threshold", c.pc_threshold);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model", {"formula", "serial_variable"});
    read(m, "formula", c.formula);
    read(m, "serial_variable", c.serial_variable);
  }
  if (j.contains("selection")) {
    const json& s = j["selection"];
    check_keys(s, "selection", {"criterion", "procedure", "candidates", "fixed_candidates", "random_candidates", "baseline_random"});
    std::string crit = "abic";
    read(s, "criterion", crit);
    c.criterion = criterion_of(crit);
    read(s, "procedure", c.procedure);
    read(s, "baseline_random", c.baseline_random);
    if (s.contains("candidates")) c.candidates = candidates_of(s["candidates"], "candidates");
    if (s.contains("fixed_candidates")) c.fixed_candidates = candidates_of(s["fixed_candidates"], "fixed_candidates");
    if (s.contains("random_candidates")) c.random_candidates = candidates_of(s["random_candidates"], "random_candidates");
  }
  if (j.contains("chain")) {
    const json& ch = j["chain"];
    check_keys(ch, "chain", {"burn", "keep", "thin", "proposal_scale", "prior_shape", "prior_scale_factor", "adapt",
                             "adapt_window", "stall_limit", "batch"});
    read(ch, "burn", c.chain.n_burn);
    read(ch, "keep", c.chain.n_keep);
    read(ch, "thin", c.chain.thin);
    read(ch, "proposal_scale", c.chain.proposal_scale);
    read(ch, "prior_shape", c.chain.prior_shape);
    read(ch, "prior_scale_factor", c.chain.prior_scale_factor);
    read(ch, "adapt", c.chain.adapt);
    read(ch, "adapt_window", c.chain.adapt_window);
    read(ch, "stall_limit", c.chain.stall_limit);
    read(ch, "batch", c.batch);
  }
  c.regions = {{"PP", {Region::Kind::meridional_band, 9.0, 17.0, {}, true}},
               {"MP", {Region::Kind::meridional_band, 17.0, 24.0, {}, true}}};
  if (j.contains("inference")) {
    const json& in = j["inference"];
    check_keys(in, "inference", {"alpha", "age_min", "age_max", "age_points", "surface_ages", "auc_range", "regions", "png", "df_draws"});
    read(in, "alpha", c.alpha);
    if (in.contains("age_min")) c.age_min = in["age_min"].get<double>();
    if (in.contains("age_max")) c.age_max = in["age_max"].get<double>();
    read(in, "age_points", c.age_points);
    read(in, "surface_ages", c.surface_ages);
    read(in, "png", c.png);
    read(in, "df_draws", c.df_draws);
    if (in.contains("auc_range")) {
      const auto r = in["auc_range"].get<std::vector<double>>();
      if (r.size() != 2) config_fail("auc_range needs two values");
      c.auc_lo = r[0];
      c.auc_hi = r[1];
    }
    if (in.contains("regions")) {
      c.regions.clear();
      for (const json& r : in["regions"]) {
        check_keys(r, "region", {"name", "theta", "area_weighted"});
        NamedRegion nr;
        read(r, "name", nr.name);
        const auto th = r.value("theta", std::vector<double>{});
        if (nr.name.empty() || th.size() != 2) config_fail("regions need a name and a two-value theta range");
        nr.region.theta_lo = th[0];
        nr.region.theta_hi = th[1];
        read(r, "area_weighted", nr.region.area_weighted);
        c.regions.push_back(nr);
      }
    }
  }
  if (j.contains("simulate")) {
    const json& s = j["simulate"];
    check_keys(s, "simulate", {"grid", "levels", "formula", "subjects", "two_unit_subjects", "support", "decay", "sparsity",
                               "intercept", "effect_sd", "spline_var", "unit_var", "subject_var", "residual_var",
                               "noise_sd", "spikes", "spike_size"});
    SyntheticStudyOptions& o = c.simulate;
    if (s.contains("grid")) {
      const auto g = s["grid"].get<std::vector<std::size_t>>();
      if (g.size() != 2) config_fail("simulate.grid needs two sizes");
      o.grid.n_meridional = g[0];
      o.grid.n_circumferential = g[1];
    }
    read(s, "levels", o.wavelet.levels);
    read(s, "formula", o.formula);
    read(s, "subjects", o.layout.n_subjects);
    read(s, "two_unit_subjects", o.layout.n_two_units);
    read(s, "support", o.support);
    read(s, "decay", o.decay);
    read(s, "sparsity", o.sparsity);
    read(s, "intercept", o.intercept);
    read(s, "effect_sd", o.effect_sd);
    read(s, "spline_var", o.spline_var);
    read(s, "unit_var", o.unit_var);
    read(s, "subject_var", o.subject_var);
    read(s, "residual_var", o.residual_var);
    read(s, "noise_sd", o.noise_sd);
    read(s, "spikes", o.spikes);
    read(s, "spike_size", o.spike_size);
    o.wavelet.filter = c.wavelet.filter;
    o.wavelet.boundary_meridional = c.wavelet.boundary_meridional;
    o.wavelet.boundary_circumferential = c.wavelet.boundary_circumferential;
    formula_of(o.formula, "simulate.formula");
  }

  if (!(c.compression_threshold > 0.0 && c.compression_threshold <= 1.0)) config_fail("compression_threshold must be in (0, 1]");
  if (!(c.pc_threshold > 0.0 && c.pc_threshold <= 1.0)) config_fail("pc_threshold must be in (0, 1]");
  if (!(c.spike_ratio > 1.0)) config_fail("spike_ratio must exceed 1");
  if (c.basis != "wavelet" && c.basis != "pc") config_fail("basis.type must be 'wavelet' or 'pc'");
  if (c.wavelet.levels < 1) config_fail("wavelet.levels must be at least 1");
  try {
    wavelet_filter(c.wavelet.filter);
  } catch (const Error& e) {
    config_fail(e.what());
  }
  if (!c.formula.empty() && c.formula != "selected") formula_of(c.formula, "model.formula");
  if (c.formula == "selected" && c.candidates.empty() && c.fixed_candidates.empty())
    config_fail("formula 'selected' needs selection candidates");
  if (c.procedure != "joint" && c.procedure != "two_step") config_fail("selection.procedure must be 'joint' or 'two_step'");
  formula_of(c.baseline_random, "baseline_random");
  if (c.chain.n_burn < 0 || c.chain.n_keep < 1 || c.chain.thin < 1) config_fail("chain needs burn >= 0, keep >= 1, thin >= 1");
  if (!(c.chain.proposal_scale > 0.0) || !(c.chain.prior_shape > 0.0) || !(c.chain.prior_scale_factor > 0.0))
    config_fail("chain scales must be positive");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) config_fail("alpha must be in (0, 1)");
  if (c.age_points < 2) config_fail("age_points must be at least 2");
  if (!(c.auc_lo > 0.0 && c.auc_hi > c.auc_lo)) config_fail("auc_range must satisfy 0 < lo < hi");
  if (c.df_draws < 100) config_fail("df_draws must be at least 100");
  for (const auto& r : c.regions)
    if (!(r.region.theta_hi > r.region.theta_lo)) config_fail("region '" + r.name + "' needs theta_hi > theta_lo");
  if (c.workers < 1) config_fail("workers must be at least 1");
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) fail("missing_file", "config " + path.string() + " does not exist");
  return parse_config(read_text(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

std::string canonical_config(const RunConfig& c) {
  json j;
  j["dataset"] = c.dataset;
  j["seed"] = c.seed;
  j["wavelet"] = {{"filter", c.wavelet.filter},
                  {"levels", c.wavelet.levels},
                  {"boundary_meridional", boundary_name(c.wavelet.boundary_meridional)},
                  {"boundary_circumferential", boundary_name(c.wavelet.boundary_circumferential)}};
  j["basis"] = {{"type", c.basis},
                {"compression_threshold", c.compression_threshold},
                {"spike_ratio", c.spike_ratio},
                {"pc_threshold", c.pc_threshold}};
  j["model"] = {{"formula", c.formula}, {"serial_variable", c.serial_variable}};
  j["selection"] = {{"criterion", to_string(c.criterion)},
                    {"procedure", c.procedure},
                    {"candidates", candidates_json(c.candidates)},
                    {"fixed_candidates", candidates_json(c.fixed_candidates)},
                    {"random_candidates", candidates_json(c.random_candidates)},
                    {"baseline_random", c.baseline_random}};
  j["chain"] = {{"burn", c.chain.n_burn},
                {"keep", c.chain.n_keep},
                {"thin", c.chain.thin},
                {"proposal_scale", c.chain.proposal_scale},
                {"prior_shape", c.chain.prior_shape},
                {"prior_scale_factor", c.chain.prior_scale_factor},
                {"adapt", c.chain.adapt},
                {"adapt_window", c.chain.adapt_window},
                {"stall_limit", c.chain.stall_limit}};
  json regions = json::array();
  for (const auto& r : c.regions)
    regions.push_back({{"name", r.name}, {"theta", {r.region.theta_lo, r.region.theta_hi}}, {"area_weighted", r.region.area_weighted}});
  j["inference"] = {{"alpha", c.alpha},
                    {"age_min", c.age_min ? json(*c.age_min) : json()},
                    {"age_max", c.age_max ? json(*c.age_max) : json()},
                    {"age_points", c.age_points},
                    {"surface_ages", c.surface_ages},
                    {"auc_range", {c.auc_lo, c.auc_hi}},
                    {"regions", regions},
                    {"png", c.png},
                    {"df_draws", c.df_draws}};
  const SyntheticStudyOptions& o = c.simulate;
  j["simulate"] = {{"grid", {o.grid.n_meridional, o.grid.n_circumferential}},
                   {"levels", o.wavelet.levels},
                   {"formula", o.formula},
                   {"subjects", o.layout.n_subjects},
                   {"two_unit_subjects", o.layout.n_two_units},
                   {"support", o.support},
                   {"decay", o.decay},
                   {"sparsity", o.sparsity},
                   {"intercept", o.intercept},
                   {"effect_sd", o.effect_sd},
                   {"spline_var", o.spline_var},
                   {"unit_var", o.unit_var},
                   {"subject_var", o.subject_var},
                   {"residual_var", o.residual_var},
                   {"noise_sd", o.noise_sd},
                   {"spikes", o.spikes},
                   {"spike_size", o.spike_size}};
  return j.dump();
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Semiparametric functional mixed models for surface data"};
  app.require_subcommand(1);
  std::string config_path, output_dir;
  int workers = 0;
  bool strict = false;
  std::optional<std::uint64_t> seed;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "generate pseudo-data and its generating parameters"},
      {"transform", "ingest a dataset and compute the basis-space coefficients"},
      {"select", "score candidate models by weighted voting"},
      {"fit", "run the per-coefficient samplers (resumable)"},
      {"diagnose", "summarize acceptance rates and convergence diagnostics"},
      {"infer", "compute data-space surfaces, bands and regional summaries"},
      {"run", "run every stage in order"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("-o,--output-dir", output_dir, "output directory (overrides SFMM_OUTPUT_DIR and the config)");
    sub->add_option("-w,--workers", workers, "worker threads (overrides SFMM_WORKERS and the config)");
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_flag("--strict", strict, "exit with code 4 when convergence warnings occur");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Context ctx;
    ctx.cfg = load_config(config_path);
    if (const char* env = std::getenv("SFMM_OUTPUT_DIR"); env && *env) ctx.cfg.output_dir = env;
    if (const char* env = std::getenv("SFMM_WORKERS"); env && *env) {
      try {
        ctx.cfg.workers = std::stoi(env);
      } catch (const std::exception&) {
        config_fail("SFMM_WORKERS must be an integer");
      }
    }
    if (!output_dir.empty()) ctx.cfg.output_dir = output_dir;
    if (workers > 0) ctx.cfg.workers = workers;
    if (seed) ctx.cfg.seed = *seed;
    if (strict) ctx.cfg.strict = true;
    if (ctx.cfg.workers < 1) config_fail("workers must be at least 1");
    const fs::path od(ctx.cfg.output_dir);
    ctx.out = od.is_absolute() || !output_dir.empty() || std::getenv("SFMM_OUTPUT_DIR") ? od : ctx.cfg.base_dir / od;
    fs::create_directories(ctx.out);
    if (command == "simulate") run_simulate(ctx);
    else if (command == "transform") run_transform(ctx);
    else if (command == "select") run_select(ctx);
    else if (command == "fit") run_fit(ctx);
    else if (command == "diagnose") run_diagnose(ctx);
    else if (command == "infer") run_infer(ctx);
    else run_all_stages(ctx);
    if (ctx.cfg.strict && ctx.warned) {
      std::cerr << "error: warnings raised in strict mode\n";
      return kExitConvergence;
    }
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::numerical: return kExitNumerical;
      case ErrorKind::convergence: return kExitConvergence;
      default: return kExitValidation;
    }
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed file: " << e.what() << '\n';
    return kExitValidation;
  }
}

}  // namespace sfmm
