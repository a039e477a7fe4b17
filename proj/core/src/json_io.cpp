#include "retmle/json_io.hpp"

#include <set>
#include <sstream>

#include <json.hpp>

namespace retmle {

namespace {

using nlohmann::json;

void require_keys(const json& obj, const std::set<std::string>& allowed,
                  const std::string& where) {
  if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (allowed.find(key) == allowed.end()) {
      throw DataError(where + ": unknown key '" + key + "'");
    }
  }
}

json process_to_json(const ProcessSpec& p) {
  return json{{"shape", p.baseline.shape},   {"scale", p.baseline.scale},
              {"alpha", p.alpha},            {"beta_treat", p.beta_treat},
              {"beta_l1", p.beta_l1},        {"beta_history", p.beta_history}};
}

ProcessSpec process_from_json(const json& obj, const std::string& where) {
  require_keys(obj, {"shape", "scale", "alpha", "beta_treat", "beta_l1", "beta_history"}, where);
  ProcessSpec p;
  p.baseline.shape = obj.value("shape", 1.3);
  p.baseline.scale = obj.value("scale", 1.0);
  p.alpha = obj.value("alpha", 0.0);
  p.beta_treat = obj.value("beta_treat", 0.0);
  p.beta_l1 = obj.value("beta_l1", 0.0);
  p.beta_history = obj.value("beta_history", 0.0);
  if (p.baseline.shape <= 0.0 || p.baseline.scale <= 0.0) {
    throw DataError(where + ": Weibull shape and scale must be positive");
  }
  return p;
}

json dgp_to_json_obj(const DgpSpec& spec) {
  return json{{"tau", spec.tau},
              {"p_treat", spec.p_treat},
              {"quadratic_event_l1", spec.quadratic_event_l1},
              {"event", process_to_json(spec.event)},
              {"death", process_to_json(spec.death)},
              {"censor", process_to_json(spec.censor)}};
}

DgpSpec dgp_from_json_obj(const json& obj) {
  require_keys(obj, {"preset", "tau", "p_treat", "quadratic_event_l1", "event", "death",
                     "censor", "censor_alpha"},
               "dgp");
  DgpSpec spec;
  if (obj.contains("preset")) {
    const std::string preset = obj.at("preset").get<std::string>();
    if (preset == "primary") {
      spec = DgpSpec::primary();
    } else if (preset == "independent_censoring") {
      spec = DgpSpec::independent_censoring();
    } else {
      throw DataError("dgp: unknown preset '" + preset + "'");
    }
  }
  if (obj.contains("tau")) spec.tau = obj.at("tau").get<double>();
  if (obj.contains("p_treat")) spec.p_treat = obj.at("p_treat").get<double>();
  if (obj.contains("quadratic_event_l1")) {
    spec.quadratic_event_l1 = obj.at("quadratic_event_l1").get<bool>();
  }
  if (obj.contains("event")) spec.event = process_from_json(obj.at("event"), "dgp.event");
  if (obj.contains("death")) spec.death = process_from_json(obj.at("death"), "dgp.death");
  if (obj.contains("censor")) spec.censor = process_from_json(obj.at("censor"), "dgp.censor");
  if (obj.contains("censor_alpha")) spec.censor.alpha = obj.at("censor_alpha").get<double>();
  if (spec.tau <= 0.0) throw DataError("dgp: tau must be positive");
  return spec;
}

json hal_settings_to_json_obj(const HalSettings& s) {
  return json{{"time_knots", s.time_knots},
              {"covariate_knots", s.covariate_knots},
              {"interaction_order", s.interaction_order},
              {"n_penalties", s.n_penalties},
              {"penalty_min_ratio", s.penalty_min_ratio},
              {"cv_folds", s.cv_folds},
              {"fold_seed", s.fold_seed}};
}

HalSettings hal_settings_from_json_obj(const json& obj, HalSettings base) {
  require_keys(obj,
               {"time_knots", "covariate_knots", "interaction_order", "n_penalties",
                "penalty_min_ratio", "cv_folds", "fold_seed"},
               "hal");
  base.time_knots = obj.value("time_knots", base.time_knots);
  base.covariate_knots = obj.value("covariate_knots", base.covariate_knots);
  base.interaction_order = obj.value("interaction_order", base.interaction_order);
  base.n_penalties = obj.value("n_penalties", base.n_penalties);
  base.penalty_min_ratio = obj.value("penalty_min_ratio", base.penalty_min_ratio);
  base.cv_folds = obj.value("cv_folds", base.cv_folds);
  base.fold_seed = obj.value("fold_seed", base.fold_seed);
  return base;
}

const char* domain_name(IndicatorFactor::Domain d) {
  switch (d) {
    case IndicatorFactor::Domain::Time: return "time";
    case IndicatorFactor::Domain::Covariate: return "covariate";
    case IndicatorFactor::Domain::History: return "history";
  }
  return "?";
}

IndicatorFactor::Domain domain_from_name(const std::string& name) {
  if (name == "time") return IndicatorFactor::Domain::Time;
  if (name == "covariate") return IndicatorFactor::Domain::Covariate;
  if (name == "history") return IndicatorFactor::Domain::History;
  throw DataError("basis: unknown factor domain '" + name + "'");
}

}  // namespace

std::string to_json(const TmleReport& report, int indent) {
  json obj{{"psi_hat", report.psi_hat},
           {"se", report.se},
           {"ci95", json::array({report.ci_low, report.ci_high})},
           {"iterations", report.iterations},
           {"pn_eic", report.pn_eic},
           {"stopped_by", report.stopped_by == StopReason::Criterion ? "criterion" : "max_iter"},
           {"truncated_weights", report.truncated_weights},
           {"stopping_threshold", report.stopping_threshold},
           {"eps_death", report.eps_death},
           {"eps_event", report.eps_event}};
  return obj.dump(indent);
}

std::string to_json(const HalFit& fit, int indent) {
  json columns = json::array();
  for (const auto& col : fit.columns) {
    json factors = json::array();
    for (const auto& f : col.factors) {
      factors.push_back(json{{"domain", domain_name(f.domain)},
                             {"coord", f.coord},
                             {"threshold", f.threshold}});
    }
    json c{{"factors", factors}};
    if (col.raw_coord >= 0) {
      c["raw_coord"] = col.raw_coord;
      c["raw_power"] = col.raw_power;
    }
    columns.push_back(c);
  }
  json coefs = json::array();
  for (size_t i = 0; i < fit.coef_index.size(); ++i) {
    coefs.push_back(json{{"column", fit.coef_index[i]}, {"value", fit.coef_value[i]}});
  }
  json obj{{"basis", json{{"columns", columns}}},
           {"intercept", fit.intercept},
           {"coefficients", coefs},
           {"penalty", fit.penalty},
           {"l1_norm", fit.l1_norm}};
  return obj.dump(indent);
}

HalFit hal_fit_from_json(const std::string& text) {
  json obj = json::parse(text);
  require_keys(obj, {"basis", "intercept", "coefficients", "penalty", "l1_norm"}, "hal_fit");
  require_keys(obj.at("basis"), {"columns"}, "hal_fit.basis");
  HalFit fit;
  for (const auto& c : obj.at("basis").at("columns")) {
    require_keys(c, {"factors", "raw_coord", "raw_power"}, "hal_fit.basis.columns[]");
    BasisColumn col;
    for (const auto& f : c.at("factors")) {
      require_keys(f, {"domain", "coord", "threshold"}, "hal_fit factor");
      col.factors.push_back({domain_from_name(f.at("domain").get<std::string>()),
                             f.at("coord").get<int>(), f.at("threshold").get<double>()});
    }
    if (c.contains("raw_coord")) {
      col.raw_coord = c.at("raw_coord").get<int>();
      col.raw_power = c.value("raw_power", 1);
    }
    fit.columns.push_back(std::move(col));
  }
  fit.intercept = obj.at("intercept").get<double>();
  for (const auto& c : obj.at("coefficients")) {
    require_keys(c, {"column", "value"}, "hal_fit.coefficients[]");
    int idx = c.at("column").get<int>();
    if (idx < 0 || idx >= static_cast<int>(fit.columns.size())) {
      throw DataError("hal_fit: coefficient index out of range");
    }
    fit.coef_index.push_back(idx);
    fit.coef_value.push_back(c.at("value").get<double>());
    fit.l1_norm += std::abs(fit.coef_value.back());
  }
  fit.penalty = obj.value("penalty", 0.0);
  return fit;
}

std::string to_json(const DgpSpec& spec, int indent) { return dgp_to_json_obj(spec).dump(indent); }

DgpSpec dgp_from_json(const std::string& text) { return dgp_from_json_obj(json::parse(text)); }

std::string to_json(const HalSettings& settings, int indent) {
  return hal_settings_to_json_obj(settings).dump(indent);
}

std::string to_json(const ReplicationSettings& settings, int indent) {
  json estimators = json::array();
  for (auto kind : settings.estimators) estimators.push_back(estimator_name(kind));
  json obj{{"dgp", dgp_to_json_obj(settings.dgp)},
           {"n", settings.n},
           {"reps", settings.reps},
           {"seed", settings.seed},
           {"estimators", estimators},
           {"a_star", settings.a_star},
           {"threads", settings.threads},
           {"mc_size", settings.mc_size},
           {"mc_seed", settings.mc_seed},
           {"hal", hal_settings_to_json_obj(settings.hal)},
           {"max_iter", settings.max_iter},
           {"weight_cap", settings.weight_cap},
           {"parametric_time_knots", settings.parametric_time_knots}};
  if (settings.psi_true) obj["psi_true"] = *settings.psi_true;
  return obj.dump(indent);
}

ReplicationSettings replication_settings_from_json(const std::string& text) {
  json obj = json::parse(text);
  require_keys(obj,
               {"dgp", "n", "reps", "seed", "estimators", "a_star", "threads", "mc_size",
                "mc_seed", "psi_true", "hal", "max_iter", "weight_cap",
                "parametric_time_knots"},
               "replicate config");
  ReplicationSettings s;
  if (obj.contains("dgp")) s.dgp = dgp_from_json_obj(obj.at("dgp"));
  s.n = obj.value("n", s.n);
  s.reps = obj.value("reps", s.reps);
  s.seed = obj.value("seed", s.seed);
  if (obj.contains("estimators")) {
    s.estimators.clear();
    for (const auto& name : obj.at("estimators")) {
      s.estimators.push_back(estimator_from_name(name.get<std::string>()));
    }
  }
  s.a_star = obj.value("a_star", s.a_star);
  s.threads = obj.value("threads", s.threads);
  s.mc_size = obj.value("mc_size", s.mc_size);
  s.mc_seed = obj.value("mc_seed", s.mc_seed);
  if (obj.contains("psi_true")) s.psi_true = obj.at("psi_true").get<double>();
  if (obj.contains("hal")) s.hal = hal_settings_from_json_obj(obj.at("hal"), s.hal);
  s.max_iter = obj.value("max_iter", s.max_iter);
  s.weight_cap = obj.value("weight_cap", s.weight_cap);
  s.parametric_time_knots = obj.value("parametric_time_knots", s.parametric_time_knots);
  return s;
}

std::string to_json(const ReplicationResult& result, int indent) {
  json aggregates = json::array();
  for (const auto& agg : result.aggregates) {
    aggregates.push_back(json{{"estimator", estimator_name(agg.estimator)},
                              {"n_ok", agg.n_ok},
                              {"n_failed", agg.n_failed},
                              {"mean_psi", agg.mean_psi},
                              {"bias", agg.bias},
                              {"sd", agg.sd},
                              {"mse", agg.mse},
                              {"coverage", agg.coverage},
                              {"mean_iterations", agg.mean_iterations},
                              {"eic_solved_fraction", agg.eic_solved_fraction}});
  }
  json obj{{"psi_true", result.psi_true},
           {"psi_true_mc_se", result.psi_true_mc_se},
           {"aggregates", aggregates},
           {"settings", json::parse(to_json(result.settings, -1))}};
  return obj.dump(indent);
}

std::string replication_csv(const ReplicationResult& result) {
  std::ostringstream out;
  out << "estimator,rep,ok,psi,se,ci_low,ci_high,covered,iterations,pn_eic,"
         "stopped_by_criterion,error\n";
  out.precision(17);
  for (const auto& row : result.rows) {
    out << estimator_name(row.estimator) << ',' << row.rep << ',' << (row.ok ? 1 : 0) << ',';
    if (row.ok) {
      out << row.psi << ',' << row.se << ',' << row.ci_low << ',' << row.ci_high << ','
          << (row.covered ? 1 : 0) << ',' << row.iterations << ',' << row.pn_eic << ','
          << (row.stopped_by_criterion ? 1 : 0) << ',';
    } else {
      out << ",,,,,,,,";
    }
    std::string err = row.error;
    for (char& ch : err) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out << err << '\n';
  }
  return out.str();
}

std::string to_json(const WeightReport& report, int indent) {
  json obj{{"max_weight", report.max_weight},
           {"mean_weight", report.mean_weight},
           {"truncated", report.truncated},
           {"n_weights", report.n_weights},
           {"min_censor_survival", report.min_censor_survival},
           {"violation", report.violation},
           {"quantiles", report.quantiles}};
  return obj.dump(indent);
}

}  // namespace retmle
