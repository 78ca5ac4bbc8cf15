#pragma once

// Scenario files for the command-line tool. A scenario is a versioned JSON object that
// names a model, a parameter vector and an experiment; unknown keys are rejected.
// `validate` lists violated constraints without solving anything; `run` executes the
// experiment and returns the tables and JSON summary it produced.

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vhi/contact.hpp"
#include "vhi/control.hpp"
#include "vhi/convergence.hpp"
#include "vhi/csv.hpp"
#include "vhi/errors.hpp"
#include "vhi/mesh.hpp"
#include "vhi/solver.hpp"

namespace vhi::scenario {

using json = nlohmann::ordered_json;

inline constexpr int kConfigVersion = 1;
inline constexpr int kSchemaVersion = 1;

enum class Experiment { solve, continuity, mosco, control, perturbed_control, audit };

inline const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::solve: return "solve";
    case Experiment::continuity: return "continuity";
    case Experiment::mosco: return "mosco";
    case Experiment::control: return "control";
    case Experiment::perturbed_control: return "perturbed-control";
    case Experiment::audit: return "audit";
  }
  return "unknown";
}

/// CLI verb that runs each experiment kind.
inline const char* verb_for(Experiment e) {
  switch (e) {
    case Experiment::solve: return "solve";
    case Experiment::continuity: return "sweep";
    case Experiment::control:
    case Experiment::perturbed_control: return "control";
    case Experiment::mosco:
    case Experiment::audit: return "verify";
  }
  return "unknown";
}

/// Exit status of the tool for each error category.
inline int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigParse: return 2;
    case ErrorCode::NonContractive:
    case ErrorCode::InnerSolveFailed:
    case ErrorCode::MaxIterations:
    case ErrorCode::InsufficientHistory:
    case ErrorCode::InfeasiblePoint: return 4;
    default: return 3;
  }
}

/// Nodal field: an optional uniform value plus per-node overrides.
struct FieldSpec {
  std::optional<std::vector<double>> uniform;
  std::vector<std::pair<int, std::vector<double>>> nodes;
  json source;  ///< as written in the config, echoed into summaries

  bool empty() const { return !uniform && nodes.empty(); }
};

struct ModelSpec {
  std::string mesh = "rod-8";
  double lambda = 0.0;
  double mu = 1.0;
  json set_B;  ///< null: the ball of radius 0
};

struct ParameterSpec {
  double omega = 0.0, mu = 0.0, rho = 0.0, g = 0.0;
  FieldSpec f0, f2;
};

struct SequenceSpec {
  ParameterComponent component = ParameterComponent::rho;
  double amplitude = 1e-3;
  int length = 64;
  double tol = 1e-4;
  int tail = 16;
  double jitter = 1e-8;
};

struct ControlSection {
  double g0 = 1.0, h0 = 1.0, rho0 = 1.0;
  FieldSpec f2_profile;
  std::optional<std::vector<double>> target;
  std::optional<double> target_from_g;  ///< manufacture the target from a solve at this g
  int g_resolution = 101;
  int s_resolution = 101;
  double refine_tol = 1e-10;
};

struct PerturbationSpec {
  ParameterComponent component = ParameterComponent::rho;
  double amplitude = 0.1;
  int length = 64;
  double state_tol = 1e-3;
};

struct MoscoSpec {
  std::string family = "thickness";  ///< "thickness" (K_g) or "admissible" (F(eta))
  double amplitude = 1.0;
  int length = 64;
  int probes = 8;
  double tol = 1e-10;
};

struct AuditSpec {
  int samples = 1000;
  double rel_tol = 1e-9;
};

struct Scenario {
  int version = kConfigVersion;
  Experiment experiment = Experiment::solve;
  ModelSpec model;
  ParameterSpec parameters;
  std::optional<double> m_tilde0;
  SolverConfig solver;
  std::optional<SequenceSpec> sequence;
  std::optional<ControlSection> control;
  std::optional<PerturbationSpec> perturbation;
  MoscoSpec mosco;
  AuditSpec audit;
  unsigned seed = 0;
  std::string output;
  std::filesystem::path base_dir;  ///< directory of the config file
};

// --- parsing ----------------------------------------------------------------------

namespace detail {

[[noreturn]] inline void parse_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::ConfigParse, path + ": " + what);
}

/// Object reader that remembers which keys were consumed so leftovers can be rejected.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) parse_error(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  std::optional<T> optional(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return convert<T>(raw(key), where(key));
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    return optional<T>(key).value_or(std::move(fallback));
  }

  template <class T>
  T required(const std::string& key) {
    if (!has(key)) parse_error(where(key), "missing required key");
    return convert<T>(raw(key), where(key));
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) parse_error(where(it.key()), "unknown key");
  }

 private:
  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) parse_error(where, "expected a number");
    } else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, unsigned>) {
      if (!v.is_number_integer()) parse_error(where, "expected an integer");
      if constexpr (std::is_same_v<T, unsigned>)
        if (v.get<long long>() < 0) parse_error(where, "expected a nonnegative integer");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) parse_error(where, "expected a string");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) parse_error(where, "expected a boolean");
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) parse_error(where, "expected an array of numbers");
      for (const auto& x : v)
        if (!x.is_number()) parse_error(where, "expected an array of numbers");
    }
    return v.get<T>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline ParameterComponent parse_component_or_throw(const std::string& s, const std::string& where) {
  if (auto c = parse_component(s)) return *c;
  parse_error(where, "unknown parameter component '" + s + "'");
}

inline FieldSpec parse_field(const json& j, const std::string& where) {
  FieldSpec f;
  f.source = j;
  if (j.is_array()) {
    for (const auto& x : j)
      if (!x.is_number()) parse_error(where, "expected an array of numbers");
    f.uniform = j.get<std::vector<double>>();
    return f;
  }
  Reader r(j, where);
  f.uniform = r.optional<std::vector<double>>("uniform");
  if (r.has("nodes")) {
    const json& nodes = r.raw("nodes");
    if (!nodes.is_array()) parse_error(r.where("nodes"), "expected an array");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      Reader e(nodes[i], r.where("nodes") + "[" + std::to_string(i) + "]");
      f.nodes.emplace_back(e.required<int>("node"), e.required<std::vector<double>>("value"));
      e.finish();
    }
  }
  r.finish();
  return f;
}

inline Experiment parse_experiment(const std::string& s) {
  for (auto e : {Experiment::solve, Experiment::continuity, Experiment::mosco, Experiment::control,
                 Experiment::perturbed_control, Experiment::audit})
    if (s == to_string(e)) return e;
  parse_error("$.experiment", "unknown experiment '" + s + "'");
}

inline SolverConfig parse_solver(const json& j) {
  Reader r(j, "$.solver");
  SolverConfig c;
  c.outer_tol = r.get("outer_tol", c.outer_tol);
  c.outer_max_iter = r.get("outer_max_iter", c.outer_max_iter);
  c.inner_tol = r.get("inner_tol", c.inner_tol);
  c.inner_max_iter = r.get("inner_max_iter", c.inner_max_iter);
  c.residual_directions = r.get("residual_directions", c.residual_directions);
  if (auto rule = r.optional<std::string>("step_rule")) {
    if (*rule == "fixed") c.inner_step_rule = StepRule::fixed;
    else if (*rule == "backtracking") c.inner_step_rule = StepRule::backtracking;
    else parse_error(r.where("step_rule"), "expected 'fixed' or 'backtracking'");
  }
  r.finish();
  return c;
}

}  // namespace detail

/// Parses a scenario from JSON text. Throws ConfigParse on syntax errors, type
/// errors, unknown keys and unknown enumerators.
inline Scenario parse(const std::string& text, std::filesystem::path base_dir = {}) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigParse, std::string("invalid JSON: ") + e.what());
  }
  using detail::Reader;
  Reader r(j, "$");
  Scenario s;
  s.base_dir = std::move(base_dir);
  s.version = r.required<int>("version");
  if (s.version != kConfigVersion)
    detail::parse_error("$.version", "unsupported version " + std::to_string(s.version));
  s.experiment = detail::parse_experiment(r.required<std::string>("experiment"));

  if (r.has("model")) {
    Reader m(r.raw("model"), "$.model");
    s.model.mesh = m.get<std::string>("mesh", s.model.mesh);
    s.model.lambda = m.get("lambda", s.model.lambda);
    s.model.mu = m.get("mu", s.model.mu);
    if (m.has("B")) s.model.set_B = m.raw("B");
    m.finish();
  }
  if (r.has("parameters")) {
    Reader p(r.raw("parameters"), "$.parameters");
    auto& ps = s.parameters;
    ps.omega = p.get("omega", 0.0);
    ps.mu = p.get("mu", 0.0);
    ps.rho = p.get("rho", 0.0);
    ps.g = p.get("g", 0.0);
    if (p.has("f0")) ps.f0 = detail::parse_field(p.raw("f0"), p.where("f0"));
    if (p.has("f2")) ps.f2 = detail::parse_field(p.raw("f2"), p.where("f2"));
    p.finish();
  }
  s.m_tilde0 = r.optional<double>("m_tilde0");
  if (r.has("solver")) s.solver = detail::parse_solver(r.raw("solver"));
  if (r.has("sequence")) {
    Reader q(r.raw("sequence"), "$.sequence");
    SequenceSpec seq;
    seq.component = detail::parse_component_or_throw(q.required<std::string>("component"), q.where("component"));
    seq.amplitude = q.get("amplitude", seq.amplitude);
    seq.length = q.get("length", seq.length);
    seq.tol = q.get("tol", seq.tol);
    seq.tail = q.get("tail", seq.tail);
    seq.jitter = q.get("jitter", seq.jitter);
    q.finish();
    s.sequence = seq;
  }
  if (r.has("control")) {
    Reader c(r.raw("control"), "$.control");
    ControlSection cs;
    cs.g0 = c.get("g0", cs.g0);
    cs.h0 = c.get("h0", cs.h0);
    cs.rho0 = c.get("rho0", cs.rho0);
    if (c.has("f2_profile")) cs.f2_profile = detail::parse_field(c.raw("f2_profile"), c.where("f2_profile"));
    cs.target = c.optional<std::vector<double>>("target");
    cs.target_from_g = c.optional<double>("target_from_g");
    cs.g_resolution = c.get("g_resolution", cs.g_resolution);
    cs.s_resolution = c.get("s_resolution", cs.s_resolution);
    cs.refine_tol = c.get("refine_tol", cs.refine_tol);
    c.finish();
    s.control = cs;
  }
  if (r.has("perturbation")) {
    Reader q(r.raw("perturbation"), "$.perturbation");
    PerturbationSpec ps;
    ps.component = detail::parse_component_or_throw(q.required<std::string>("component"), q.where("component"));
    ps.amplitude = q.get("amplitude", ps.amplitude);
    ps.length = q.get("length", ps.length);
    ps.state_tol = q.get("state_tol", ps.state_tol);
    q.finish();
    s.perturbation = ps;
  }
  if (r.has("mosco")) {
    Reader q(r.raw("mosco"), "$.mosco");
    s.mosco.family = q.get<std::string>("family", s.mosco.family);
    if (s.mosco.family != "thickness" && s.mosco.family != "admissible")
      detail::parse_error(q.where("family"), "expected 'thickness' or 'admissible'");
    s.mosco.amplitude = q.get("amplitude", s.mosco.amplitude);
    s.mosco.length = q.get("length", s.mosco.length);
    s.mosco.probes = q.get("probes", s.mosco.probes);
    s.mosco.tol = q.get("tol", s.mosco.tol);
    q.finish();
  }
  if (r.has("audit")) {
    Reader q(r.raw("audit"), "$.audit");
    s.audit.samples = q.get("samples", s.audit.samples);
    s.audit.rel_tol = q.get("rel_tol", s.audit.rel_tol);
    q.finish();
  }
  s.seed = r.get<unsigned>("seed", 0u);
  s.output = r.get<std::string>("output", "");
  r.finish();
  return s;
}

inline Scenario load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::ConfigParse, "cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path.parent_path());
}

// --- models and fields ------------------------------------------------------------

/// Mesh file: {"dimension", "nodes", "elements", "clamped", "traction", "contact"}.
inline MeshInput parse_mesh(const json& j, const std::string& where) {
  detail::Reader r(j, where);
  MeshInput m;
  m.dimension = r.required<int>("dimension");
  const json& nodes = r.raw("nodes");
  if (!nodes.is_array() || nodes.empty()) detail::parse_error(r.where("nodes"), "expected a nonempty array");
  m.nodes.resize(Eigen::Index(nodes.size()), m.dimension);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].is_array() || nodes[i].size() != std::size_t(m.dimension))
      detail::parse_error(r.where("nodes"), "node " + std::to_string(i) + " needs " + std::to_string(m.dimension) +
                                                " coordinates");
    for (int k = 0; k < m.dimension; ++k) {
      if (!nodes[i][std::size_t(k)].is_number()) detail::parse_error(r.where("nodes"), "expected numbers");
      m.nodes(Eigen::Index(i), k) = nodes[i][std::size_t(k)].get<double>();
    }
  }
  auto lists = [&](const std::string& key) {
    std::vector<std::vector<int>> out;
    if (!r.has(key)) return out;
    const json& v = r.raw(key);
    try {
      out = v.get<std::vector<std::vector<int>>>();
    } catch (const json::exception&) {
      detail::parse_error(r.where(key), "expected an array of integer arrays");
    }
    return out;
  };
  m.elements = lists("elements");
  m.traction = lists("traction");
  m.contact = lists("contact");
  if (r.has("clamped")) {
    try {
      m.clamped = r.raw("clamped").get<std::vector<int>>();
    } catch (const json::exception&) {
      detail::parse_error(r.where("clamped"), "expected an array of integers");
    }
  }
  r.finish();
  return m;
}

inline MeshInput mesh_input(const Scenario& s) {
  static const std::regex builtin(R"((rod|square)-([0-9]+))");
  std::smatch m;
  if (std::regex_match(s.model.mesh, m, builtin)) {
    const int n = std::stoi(m[2]);
    if (n < 1) throw Error(ErrorCode::ConfigValidation, "mesh " + s.model.mesh + " needs at least one element");
    return m[1] == "rod" ? rod_mesh(n) : square_mesh(n);
  }
  const auto path = s.base_dir / s.model.mesh;
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::ConfigValidation, "mesh file not found: " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigParse, "mesh " + path.string() + ": " + e.what());
  }
  return parse_mesh(j, "mesh");
}

inline ConvexSet set_B(const Scenario& s, int strain_dim) {
  const json& b = s.model.set_B;
  if (b.is_null()) return ConvexSet::ball(strain_dim, 0.0);
  detail::Reader r(b, "$.model.B");
  const auto kind = r.required<std::string>("kind");
  ConvexSet out = ConvexSet::ball(strain_dim, 0.0);
  if (kind == "ball") {
    out = ConvexSet::ball(strain_dim, r.required<double>("radius"));
  } else if (kind == "interval") {
    out = ConvexSet::interval(r.required<double>("lo"), r.required<double>("hi"));
  } else if (kind == "box") {
    const auto lo = r.required<std::vector<double>>("lo"), hi = r.required<std::vector<double>>("hi");
    out = ConvexSet::box(Eigen::Map<const Vector>(lo.data(), Eigen::Index(lo.size())),
                         Eigen::Map<const Vector>(hi.data(), Eigen::Index(hi.size())));
  } else {
    detail::parse_error(r.where("kind"), "expected 'ball', 'interval' or 'box'");
  }
  r.finish();
  return out;
}

inline FemModel build(const Scenario& s) {
  const MeshInput mesh = mesh_input(s);
  const int strain_dim = mesh.dimension == 1 ? 1 : 3;
  return build_model(mesh, ElasticLaw{s.model.lambda, s.model.mu}, set_B(s, strain_dim));
}

inline Matrix field(const FemModel& model, const FieldSpec& f, const std::string& name) {
  if (f.empty()) return Matrix();
  const int d = model.dimension();
  Matrix out = Matrix::Zero(model.n_nodes(), d);
  auto check = [&](const std::vector<double>& v) {
    if (v.size() != std::size_t(d))
      throw Error(ErrorCode::ConfigValidation, name + ": values need " + std::to_string(d) + " components");
  };
  if (f.uniform) {
    check(*f.uniform);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (int k = 0; k < d; ++k) out(i, k) = (*f.uniform)[std::size_t(k)];
  }
  for (const auto& [node, value] : f.nodes) {
    if (node < 0 || node >= model.n_nodes())
      throw Error(ErrorCode::ConfigValidation, name + ": node " + std::to_string(node) + " out of range");
    check(value);
    for (int k = 0; k < d; ++k) out(node, k) = value[std::size_t(k)];
  }
  return out;
}

inline ParameterVector parameters(const FemModel& model, const Scenario& s) {
  ParameterVector p;
  p.omega = s.parameters.omega;
  p.mu = s.parameters.mu;
  p.rho = s.parameters.rho;
  p.g = s.parameters.g;
  p.f0 = field(model, s.parameters.f0, "f0");
  p.f2 = field(model, s.parameters.f2, "f2");
  return p;
}

inline ContactOptions contact_options(const Scenario& s) { return ContactOptions{s.m_tilde0}; }

/// Control problem of a scenario; the target is left empty when it must be manufactured.
inline ControlSpec control_spec(const FemModel& model, const Scenario& s) {
  if (!s.control) throw Error(ErrorCode::ConfigValidation, "experiment needs a control section");
  const auto& c = *s.control;
  ControlSpec spec;
  spec.eta = Eta{s.parameters.omega, s.parameters.mu, s.parameters.rho, field(model, s.parameters.f0, "f0")};
  spec.g0 = c.g0;
  spec.h0 = c.h0;
  spec.rho0 = c.rho0;
  spec.f2_profile = field(model, c.f2_profile, "f2_profile");
  if (c.target) spec.target = Eigen::Map<const Vector>(c.target->data(), Eigen::Index(c.target->size()));
  spec.g_resolution = c.g_resolution;
  spec.s_resolution = c.s_resolution;
  spec.refine_tol = c.refine_tol;
  spec.contact = contact_options(s);
  return spec;
}

inline std::function<Eta(int)> eta_rule(const ControlSpec& spec, const PerturbationSpec& ps) {
  return [eta = spec.eta, ps](int n) {
    Eta e = eta;
    const double step = ps.amplitude / n;
    switch (ps.component) {
      case ParameterComponent::omega: e.omega += step; break;
      case ParameterComponent::mu: e.mu += step; break;
      case ParameterComponent::rho: e.rho += step; break;
      case ParameterComponent::f0: e.f0 *= 1.0 + step; break;
      default: break;
    }
    return e;
  };
}

// --- validation ---------------------------------------------------------------------

/// Every violated constraint, named after its set. Builds the model but never solves.
inline std::vector<std::string> validate(const Scenario& s) {
  std::vector<std::string> out;
  auto add = [&](const std::string& v) {
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  };
  std::optional<FemModel> model;
  try {
    model = build(s);
  } catch (const Error& e) {
    add(std::string("model: ") + e.what());
    return out;
  }
  try {
    s.solver.validate();
  } catch (const Error& e) {
    add(std::string("solver: ") + e.what());
  }

  ParameterVector p;
  try {
    p = parameters(*model, s);
  } catch (const Error& e) {
    add(e.what());
    return out;
  }
  const bool controlled = s.experiment == Experiment::control || s.experiment == Experiment::perturbed_control;
  for (const auto& v : parameter_violations(*model, p, contact_options(s)))
    if (!(controlled && v.rfind("g ≥ 0", 0) == 0)) add(v);
  const double gamma2 = model->gamma() * model->gamma();
  if (p.mu >= 0.0 && !((p.mu + 1.0) * gamma2 < model->m_F()))
    add("(μ + 1)‖γ‖² < m_F (smallness), (μ + 1)‖γ‖² = " + std::to_string((p.mu + 1.0) * gamma2) +
        ", m_F = " + std::to_string(model->m_F()));

  if (s.control) {
    const auto& c = *s.control;
    if (!controlled) {
      if (!(p.g <= c.g0)) add("g ≤ g₀ (set U)");
      if (!(model->l2_norm_contact(p.f2) <= c.h0)) add("‖f₂‖ ≤ h₀ (set U)");
    }
    try {
      auto spec = control_spec(*model, s);
      if (!c.target) spec.target = Vector::Zero(Eigen::Index(model->contact_nodes().size()));
      for (const auto& v : spec.violations(*model)) add(v);
      if (c.target && c.target_from_g) add("control: give either target or target_from_g");
      if (!c.target && !c.target_from_g && controlled) add("control: target or target_from_g required");
      if (c.target_from_g && !(*c.target_from_g >= spec.g_min() && *c.target_from_g <= spec.g_max()))
        add("control: target_from_g must lie in [ρ, min(g₀, ρ₀)]");
    } catch (const Error& e) {
      add(e.what());
    }
  }

  auto check_sequence = [&](const std::function<ParameterVector(int)>& at, int length, const std::string& label) {
    for (int n = 1; n <= length; ++n)
      for (const auto& v : parameter_violations(*model, at(n), contact_options(s)))
        if (!(controlled && v.rfind("g ≥ 0", 0) == 0)) add(label + " at n = " + std::to_string(n) + ": " + v);
  };
  if (s.sequence) {
    if (s.sequence->length < 1) add("sequence: length must be >= 1");
    else {
      const auto seq = single_parameter_sequence(p, s.sequence->component, s.sequence->amplitude, s.sequence->length);
      check_sequence([&](int n) { return seq.at(n); }, s.sequence->length, "sequence");
    }
  }
  if (s.perturbation) {
    const auto& ps = *s.perturbation;
    if (ps.component == ParameterComponent::g || ps.component == ParameterComponent::f2)
      add("perturbation: component must be one of omega, mu, rho, f0");
    if (ps.length < 1) add("perturbation: length must be >= 1");
    if (s.control && ps.length >= 1) {
      for (int n = 1; n <= ps.length; ++n) {
        const double rho_n = ps.component == ParameterComponent::rho ? p.rho + ps.amplitude / n : p.rho;
        if (!(rho_n <= std::min(s.control->g0, s.control->rho0))) {
          add("perturbation at n = " + std::to_string(n) + ": F(η) empty: ρ ≤ g ≤ ρ₀ unsatisfiable with g ≤ g₀");
          break;
        }
      }
    }
  }

  switch (s.experiment) {
    case Experiment::continuity:
      if (!s.sequence) add("experiment continuity needs a sequence section");
      break;
    case Experiment::control:
      if (!s.control) add("experiment control needs a control section");
      break;
    case Experiment::perturbed_control:
      if (!s.control) add("experiment perturbed-control needs a control section");
      if (!s.perturbation) add("experiment perturbed-control needs a perturbation section");
      break;
    case Experiment::mosco:
      if (s.mosco.length < 1 || s.mosco.probes < 1) add("mosco: length and probes must be >= 1");
      if (s.mosco.family == "thickness" && !(p.g + std::min(0.0, s.mosco.amplitude) >= 0.0))
        add("mosco: thickness sequence g + amplitude / n must stay >= 0");
      if (s.mosco.family == "admissible" && !s.control) add("mosco: the admissible family needs a control section");
      break;
    case Experiment::audit:
      if (s.audit.samples < 1) add("audit: samples must be >= 1");
      break;
    case Experiment::solve:
      break;
  }
  return out;
}

/// Error category of a validation message.
inline ErrorCode violation_code(const std::string& v) {
  if (v.find("F(η) empty") != std::string::npos) return ErrorCode::EmptyAdmissibleSet;
  if (v.find("(smallness)") != std::string::npos) return ErrorCode::SmallnessViolated;
  if (v.find("(set ") != std::string::npos) return ErrorCode::ParameterOutsideLambda;
  return ErrorCode::ConfigValidation;
}

// --- running --------------------------------------------------------------------------

struct RunOutput {
  json summary;
  std::vector<std::pair<std::string, csv::Table>> tables;  ///< file name, contents

  /// Writes every table and summary.json into dir, one file at a time.
  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [name, t] : tables) t.save((dir / name).string());
    std::ofstream f(dir / "summary.json", std::ios::binary);
    if (!f) throw Error(ErrorCode::InvalidArgument, "cannot write " + (dir / "summary.json").string());
    f << summary.dump(2) << "\n";
  }
};

struct RunOptions {
  int jobs = 1;
  std::optional<unsigned> seed;  ///< overrides the config seed
};

namespace detail {

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline csv::Table nodal_table(const FemModel& model, const Vector& u) {
  std::vector<std::string> header{"node", "x"};
  if (model.dimension() == 2) header.push_back("y");
  header.push_back("u1");
  if (model.dimension() == 2) header.push_back("u2");
  csv::Table t(header);
  const Matrix U = model.expand(u);
  for (int n = 0; n < model.n_nodes(); ++n) {
    std::vector<double> row{double(n)};
    for (int k = 0; k < model.dimension(); ++k) row.push_back(model.nodes()(n, k));
    for (int k = 0; k < model.dimension(); ++k) row.push_back(U(n, k));
    t.add_row(row);
  }
  return t;
}

inline json constants_json(const VhiConstants& c, double lipschitz, double gamma) {
  return json{{"m", c.m},   {"alpha", c.alpha}, {"beta", c.beta},         {"c0", c.c0},
              {"c1", c.c1}, {"d0", c.d0},       {"lipschitz", lipschitz}, {"trace_norm", gamma}};
}

inline json mosco_json(const MoscoReport& r) {
  double excess = 0.0;
  for (double e : r.limit_excess) excess = std::max(excess, e);
  return json{{"pass", r.pass},
              {"recovery_violations", r.recovery_violations},
              {"membership_violations", r.membership_violations},
              {"max_limit_excess", excess},
              {"note", r.note}};
}

inline csv::Table mosco_table(const MoscoReport& r, const std::vector<double>& family) {
  csv::Table t({"n", "value_n", "recovery_error", "recovery_bound"});
  for (std::size_t i = 0; i < r.recovery_errors.size(); ++i)
    t.add_row(std::vector<double>{double(i + 1), family[i], r.recovery_errors[i], r.recovery_bounds[i]});
  return t;
}

inline csv::Table audit_table(const AuditReport& r) {
  csv::Table t({"name", "measured", "bound", "samples", "violations", "pass"});
  for (const auto& e : r.entries)
    t.add_row({e.name, csv::format(e.measured), csv::format(e.bound), std::to_string(e.samples),
               std::to_string(e.violations), e.pass ? "true" : "false"});
  return t;
}

inline Vector manufactured_target(const FemModel& model, const ControlSpec& spec, double g,
                                  const SolverConfig& config) {
  const auto sol = solve_contact(model, spec.parameters(Control{g, 0.0}), config, spec.contact);
  if (!sol.result.converged) throw Error(ErrorCode::MaxIterations, "target solve did not converge");
  return model.normal_displacement(sol.result.u);
}

}  // namespace detail

/// Runs the experiment of a validated scenario under `verb`.
inline RunOutput run(const Scenario& s, const std::string& verb, const RunOptions& opt = {}) {
  if (verb != verb_for(s.experiment))
    throw Error(ErrorCode::ConfigValidation, std::string("experiment ") + to_string(s.experiment) +
                                                 " runs under verb '" + verb_for(s.experiment) + "', not '" + verb + "'");
  if (const auto v = validate(s); !v.empty()) throw Error(violation_code(v.front()), v.front());
  const unsigned seed = opt.seed.value_or(s.seed);
  SolverConfig config = s.solver;
  config.seed = seed;
  const FemModel model = build(s);
  const ParameterVector p = parameters(model, s);

  RunOutput out;
  json& sum = out.summary;
  sum["schema_version"] = kSchemaVersion;
  sum["tool"] = "vhi";
  sum["verb"] = verb;
  sum["experiment"] = to_string(s.experiment);
  sum["seed"] = seed;
  sum["model"] = json{{"mesh", s.model.mesh},
                      {"dimension", model.dimension()},
                      {"nodes", model.n_nodes()},
                      {"dofs", model.n_dofs()},
                      {"m_F", model.m_F()},
                      {"L_F", model.L_F()},
                      {"trace_norm", model.gamma()}};
  json result;

  switch (s.experiment) {
    case Experiment::solve: {
      const AssembledContact ac = assemble(model, p, contact_options(s));
      const auto sol = solve_contact(model, p, config, contact_options(s));
      const auto& r = sol.result;
      if (!r.converged) throw Error(ErrorCode::MaxIterations, "solver did not converge");
      result["converged"] = r.converged;
      result["outer_iters"] = r.outer_iters;
      result["inner_iters_total"] = r.inner_iters_total;
      result["vi_residual"] = r.vi_residual;
      result["theta"] = ac.instance.theta();
      result["contraction_estimate"] =
          r.increment_history.size() >= 2 ? detail::number(contraction_factor(r)) : json(nullptr);
      result["preasymptotic_ratio_flag"] = r.preasymptotic_ratio_flag;
      result["increments"] = r.increment_history;
      result["constants"] = detail::constants_json(ac.instance.constants(), ac.lipschitz_bound, model.gamma());
      result["active_nodes"] = sol.active_nodes;
      csv::Table contact({"node", "normal", "tangential", "status", "at_bound"});
      for (const auto& n : sol.nodes)
        contact.add_row({std::to_string(n.node), csv::format(n.normal), csv::format(n.tangential),
                         vhi::to_string(n.status), n.at_bound ? "true" : "false"});
      out.tables.emplace_back("solution.csv", detail::nodal_table(model, r.u));
      out.tables.emplace_back("contact.csv", std::move(contact));
      break;
    }
    case Experiment::continuity: {
      const auto& q = *s.sequence;
      const auto seq = single_parameter_sequence(p, q.component, q.amplitude, q.length);
      ContinuityOptions co;
      co.tol = q.tol;
      co.tail = q.tail;
      co.jitter = q.jitter;
      co.jobs = opt.jobs;
      co.contact = contact_options(s);
      const auto r = continuity_experiment(model, seq, config, co);
      result["component"] = vhi::to_string(q.component);
      result["amplitude"] = q.amplitude;
      result["length"] = q.length;
      result["tol"] = q.tol;
      result["final_error"] = r.rows.back().solution_error;
      result["below_tol"] = r.below_tol;
      result["tail_nonincreasing"] = r.tail_nonincreasing;
      result["flagged"] = r.flagged();
      out.tables.emplace_back("continuity.csv", continuity_csv(r));
      break;
    }
    case Experiment::mosco: {
      const auto& m = s.mosco;
      if (m.family == "thickness") {
        std::vector<double> gs;
        for (int n = 1; n <= m.length; ++n) gs.push_back(p.g + m.amplitude / n);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal;
        std::vector<Vector> probes;
        for (int k = 0; k < m.probes; ++k) {
          Vector v(model.n_dofs());
          for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
          probes.push_back(project_contact_set(model, p.g, v));
        }
        const auto r = mosco_check_Kg(model, gs, p.g, probes, m.tol, seed);
        result = detail::mosco_json(r);
        result["family"] = m.family;
        out.tables.emplace_back("mosco.csv", detail::mosco_table(r, gs));
      } else {
        auto spec = control_spec(model, s);
        spec.target = Vector::Zero(Eigen::Index(model.contact_nodes().size()));
        PerturbationSpec ps{ParameterComponent::rho, m.amplitude, m.length, 0.0};
        const auto rule = eta_rule(spec, ps);
        const auto r = admissible_set_mosco_check(model, spec, rule, m.length, m.tol, m.probes, seed);
        std::vector<double> rhos;
        for (int n = 1; n <= m.length; ++n) rhos.push_back(rule(n).rho);
        result = detail::mosco_json(r);
        result["family"] = m.family;
        out.tables.emplace_back("mosco.csv", detail::mosco_table(r, rhos));
      }
      break;
    }
    case Experiment::audit: {
      AuditReport r;
      if (s.sequence) {
        const auto seq = single_parameter_sequence(p, s.sequence->component, s.sequence->amplitude, s.sequence->length);
        r = hypothesis_audit(model, seq, s.audit.samples, seed, s.sequence->tol, contact_options(s));
      } else {
        r = assumption_audit(model, p, s.audit.samples, seed, s.audit.rel_tol, contact_options(s));
      }
      result["pass"] = r.pass();
      result["entries"] = json::array();
      for (const auto& e : r.entries)
        result["entries"].push_back(json{{"name", e.name},
                                         {"measured", detail::number(e.measured)},
                                         {"bound", detail::number(e.bound)},
                                         {"samples", e.samples},
                                         {"violations", e.violations},
                                         {"pass", e.pass}});
      result["note"] = r.note;
      out.tables.emplace_back("audit.csv", detail::audit_table(r));
      break;
    }
    case Experiment::control:
    case Experiment::perturbed_control: {
      auto spec = control_spec(model, s);
      spec.jobs = opt.jobs;
      if (s.control->target_from_g)
        spec.target = detail::manufactured_target(model, spec, *s.control->target_from_g, config);
      result["f2_profile"] = s.control->f2_profile.source.is_null() ? json(nullptr) : s.control->f2_profile.source;
      result["s_max"] = spec.s_max(model);
      result["target"] = std::vector<double>(spec.target.data(), spec.target.data() + spec.target.size());
      if (s.experiment == Experiment::control) {
        J_Evaluator J(model, spec, config);
        const auto q = solve_control(J);
        result["g_star"] = q.q_star.g;
        result["s_star"] = q.q_star.s;
        result["cost"] = q.cost;
        result["evaluations"] = q.evaluations;
        out.tables.emplace_back("landscape.csv", J.landscape_csv());
        out.tables.emplace_back("state.csv", detail::nodal_table(model, q.u_star));
      } else {
        const auto& ps = *s.perturbation;
        PerturbedControlOptions po;
        po.jobs = opt.jobs;
        po.state_tol = ps.state_tol;
        const auto rule = eta_rule(spec, ps);
        const auto r = perturbed_control_experiment(model, spec, rule, ps.length, config, po);
        const auto mosco = admissible_set_mosco_check(model, spec, rule, ps.length, 1e-10, 16, seed);
        result["limit"] = json{{"g_star", r.limit.q_star.g}, {"s_star", r.limit.q_star.s}, {"cost", r.limit.cost}};
        result["component"] = vhi::to_string(ps.component);
        result["amplitude"] = ps.amplitude;
        result["grid_spacing"] = r.grid_spacing;
        result["tail_cluster"] = r.tail_cluster;
        result["cluster_distance"] = r.cluster_distance;
        result["control_converged"] = r.control_converged;
        result["state_converged"] = r.state_converged;
        result["final_state_error"] = r.rows.back().state_error;
        result["admissible_mosco"] = detail::mosco_json(mosco);
        result["note"] = r.note;
        out.tables.emplace_back("perturbed_control.csv", r.to_csv());
      }
      break;
    }
  }
  json files = json::array();
  for (const auto& t : out.tables) files.push_back(t.first);
  files.push_back("summary.json");
  sum["files"] = files;
  sum["result"] = result;
  return out;
}

/// Machine-readable error report.
inline json error_json(ErrorCode code, const std::string& message, const std::vector<std::string>& violations = {}) {
  json e{{"code", std::string(vhi::to_string(code))}, {"exit_code", exit_code(code)}, {"message", message}};
  if (!violations.empty()) e["violations"] = violations;
  return json{{"schema_version", kSchemaVersion}, {"error", e}};
}

}  // namespace vhi::scenario
