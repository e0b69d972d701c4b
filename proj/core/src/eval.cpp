#include "epopr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "epopr/error.hpp"
#include "epopr/metrics.hpp"
#include "epopr/random.hpp"

namespace epopr::eval {
namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single value.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

sim::EnvConfig make_env(const datagen::Dataset& data, const forest::QrfModel& model,
                        const conformal::CalibrationFactor& factor, const EnvOptions& opt) {
  if (data.regions.empty()) throw Error(Errc::kEmptyInput, "dataset has no regions");
  sim::EnvConfig env;
  env.regions = data.regions;
  env.repair_samples.resize(data.regions.size());
  for (const auto& r : data.records) {
    env.repair_samples.at(static_cast<std::size_t>(r.region_id)).push_back(r.repair_duration);
  }
  env.intervals.reserve(data.regions.size());
  for (const auto& r : data.regions) {
    env.intervals.push_back(conformal::predict_interval(model, factor, r.features, r.group));
  }
  env.travel.speed_kmh = opt.speed_kmh;
  env.prune_max_km = opt.prune_max_km;
  env.d_limit = opt.d_limit;
  if (opt.depot) {
    env.depot = *opt.depot;
  } else {
    double lo_x = data.regions[0].coord.x, hi_x = lo_x;
    double lo_y = data.regions[0].coord.y, hi_y = lo_y;
    for (const auto& r : data.regions) {
      lo_x = std::min(lo_x, r.coord.x);
      hi_x = std::max(hi_x, r.coord.x);
      lo_y = std::min(lo_y, r.coord.y);
      hi_y = std::max(hi_y, r.coord.y);
    }
    env.depot = {0.5 * (lo_x + hi_x), 0.5 * (lo_y + hi_y)};
  }
  sim::compute_feature_scale(env);
  sim::validate(env);
  return env;
}

Benchmark build_benchmark(const BenchmarkSpec& spec) {
  Benchmark b;
  b.data = datagen::split(datagen::generate(spec.generator), spec.fractions,
                          spec.generator.seed);
  b.model = forest::fit(b.data.records_in(datagen::Split::kTrain), spec.qrf);
  b.factor = conformal::calibrate(b.model, b.data.records_in(datagen::Split::kCalibrate),
                                  spec.alpha, spec.method);
  b.env = make_env(b.data, b.model, b.factor, spec.env);
  return b;
}

PolicyFactory shared(sim::Policy p) {
  return [p = std::move(p)](std::uint64_t, std::size_t) { return p; };
}

EvalResult evaluate_policy(const sim::EnvConfig& env, const PolicyFactory& policy,
                           std::size_t n_episodes, std::uint64_t seed, std::size_t jobs) {
  if (n_episodes == 0) throw Error(Errc::kPrecondition, "n_episodes must be >= 1");
  sim::validate(env);
  EvalResult res;
  res.outcomes.resize(n_episodes);

  auto run = [&](std::size_t e) {
    res.outcomes[e] = sim::rollout(env, policy(seed, e), mix_seed(seed, e));
  };
  jobs = std::clamp<std::size_t>(jobs, 1, n_episodes);
  if (jobs == 1) {
    for (std::size_t e = 0; e < n_episodes; ++e) run(e);
  } else {
    std::vector<std::exception_ptr> errors(jobs);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < jobs; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t e = w; e < n_episodes; e += jobs) run(e);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (auto& ep : errors) {
      if (ep) std::rethrow_exception(ep);
    }
  }

  res.avg_outage = metrics::avg_outage(res.outcomes);
  metrics::GroupedSamples pooled;
  double wd_sum = 0.0;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    const auto& o = res.outcomes[e];
    wd_sum += o.cost;
    for (std::size_t r = 0; r < o.outage_by_region.size(); ++r) {
      const auto g = env.regions[r].group;
      pooled[g].push_back(o.outage_by_region[r]);
      res.samples.push_back({e, static_cast<RegionId>(r), g, o.outage_by_region[r]});
    }
  }
  res.wd_inequity = wd_sum / static_cast<double>(n_episodes);
  res.wd_inequity_pooled = pooled.size() >= 2 ? metrics::wd_inequity(pooled) : 0.0;
  return res;
}

ComparisonRow summarize(const sim::EnvConfig& env, const NamedPolicy& policy,
                        std::size_t n_episodes, const std::vector<std::uint64_t>& seeds,
                        std::size_t jobs, std::vector<OutageSample>* first_seed_samples) {
  if (seeds.empty()) throw Error(Errc::kPrecondition, "at least one seed required");
  ComparisonRow row;
  row.name = policy.name;
  std::vector<double> pooled;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    auto r = evaluate_policy(env, policy.factory, n_episodes, seeds[i], jobs);
    row.outage_by_seed.push_back(r.avg_outage);
    row.wd_by_seed.push_back(r.wd_inequity);
    pooled.push_back(r.wd_inequity_pooled);
    if (i == 0 && first_seed_samples) *first_seed_samples = std::move(r.samples);
  }
  row.outage_mean = mean_of(row.outage_by_seed);
  row.outage_std = std_of(row.outage_by_seed);
  row.wd_mean = mean_of(row.wd_by_seed);
  row.wd_std = std_of(row.wd_by_seed);
  row.wd_pooled_mean = mean_of(pooled);
  return row;
}

ComparisonTable compare(const sim::EnvConfig& env, const std::vector<NamedPolicy>& policies,
                        std::size_t n_episodes, const std::vector<std::uint64_t>& seeds,
                        std::size_t jobs) {
  if (policies.size() < 2) throw Error(Errc::kPrecondition, "compare needs >= 2 policies");
  if (seeds.empty()) throw Error(Errc::kPrecondition, "compare needs >= 1 seed");
  ComparisonTable t;
  for (const auto& p : policies) t.rows.push_back(summarize(env, p, n_episodes, seeds, jobs));
  return t;
}

void write_table_csv(std::ostream& os, const ComparisonTable& t) {
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  os << "policy,avg_outage_mean,avg_outage_std,wd_inequity_mean,wd_inequity_std,"
        "wd_inequity_pooled_mean\n";
  for (const auto& r : t.rows) {
    os << r.name << ',' << r.outage_mean << ',' << r.outage_std << ',' << r.wd_mean << ','
       << r.wd_std << ',' << r.wd_pooled_mean << '\n';
  }
  os.precision(old);
}

std::string format_table(const ComparisonTable& t) {
  std::size_t w = 6;
  for (const auto& r : t.rows) w = std::max(w, r.name.size());
  std::ostringstream os;
  auto pad = [](std::string s, std::size_t n) {
    if (s.size() < n) s.append(n - s.size(), ' ');
    return s;
  };
  os << pad("policy", w) << "  " << pad("T_outage (h)", 20) << "  WD_inequity\n";
  for (const auto& r : t.rows) {
    os << pad(r.name, w) << "  "
       << pad(fixed3(r.outage_mean) + " +- " + fixed3(r.outage_std), 20) << "  "
       << fixed3(r.wd_mean) << " +- " << fixed3(r.wd_std) << '\n';
  }
  return os.str();
}

void write_samples_csv(std::ostream& os, const std::vector<OutageSample>& samples) {
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  os << "episode,region_id,group,outage_h\n";
  for (const auto& s : samples) {
    os << s.episode << ',' << s.region << ',' << group_name(s.group) << ',' << s.outage << '\n';
  }
  os.precision(old);
}

void write_samples_csv(std::ostream& os,
                       const std::vector<std::pair<std::string, std::vector<OutageSample>>>&
                           by_policy) {
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  os << "policy,episode,region_id,group,outage_h\n";
  for (const auto& [name, samples] : by_policy) {
    for (const auto& s : samples) {
      os << name << ',' << s.episode << ',' << s.region << ',' << group_name(s.group) << ','
         << s.outage << '\n';
    }
  }
  os.precision(old);
}

double PredictionReport::coverage_gap(conformal::Method m) const {
  double lo = 1.0, hi = 0.0;
  bool any = false;
  for (const auto& r : rows) {
    if (r.method != m) continue;
    any = true;
    lo = std::min(lo, r.coverage);
    hi = std::max(hi, r.coverage);
  }
  if (!any) throw Error(Errc::kPrecondition, "method not present in report");
  return hi - lo;
}

PredictionReport prediction_report(const forest::QrfModel& model,
                                   const datagen::Dataset& data,
                                   const std::vector<conformal::Method>& methods,
                                   double alpha) {
  if (methods.empty()) throw Error(Errc::kPrecondition, "no calibration methods given");
  const auto cal = data.records_in(datagen::Split::kCalibrate);
  const auto test = data.records_in(datagen::Split::kTest);
  if (cal.empty() || test.empty()) {
    throw Error(Errc::kPrecondition, "dataset needs calibration and test splits");
  }
  const auto raw_cal = conformal::raw_intervals(model, cal, alpha);
  const auto raw_test = conformal::raw_intervals(model, test, alpha);

  PredictionReport rep;
  rep.alpha = alpha;
  for (auto m : methods) {
    const auto f = conformal::calibrate_raw(raw_cal, cal, alpha, m);
    std::map<SensitiveGroup, std::vector<PredictionInterval>> by_group;
    std::map<SensitiveGroup, std::size_t> hits;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto pi = conformal::apply(f, raw_test[i], test[i].group);
      by_group[test[i].group].push_back(pi);
      hits[test[i].group] += pi.contains(test[i].repair_duration) ? 1 : 0;
    }
    const auto lengths = metrics::interval_stats(by_group);
    for (const auto& [g, pis] : by_group) {
      PredictionRow row;
      row.method = m;
      row.group = g;
      row.n = pis.size();
      row.coverage = static_cast<double>(hits[g]) / static_cast<double>(pis.size());
      row.mean_length = lengths.at(g).mean_length;
      rep.rows.push_back(row);
    }
  }
  return rep;
}

PredictionReport prediction_report(const datagen::Dataset& data,
                                   const std::vector<conformal::Method>& methods,
                                   double alpha, const forest::QrfParams& params) {
  if (methods.empty()) throw Error(Errc::kPrecondition, "no calibration methods given");
  const auto train = data.records_in(datagen::Split::kTrain);
  const auto model = forest::fit(train, params);
  return prediction_report(model, data, methods, alpha);
}

void write_report_csv(std::ostream& os, const PredictionReport& r) {
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  os << "method,group,coverage,mean_length,n,alpha\n";
  for (const auto& row : r.rows) {
    os << conformal::method_name(row.method) << ',' << group_name(row.group) << ','
       << row.coverage << ',' << row.mean_length << ',' << row.n << ',' << r.alpha << '\n';
  }
  os.precision(old);
}

std::string format_report(const PredictionReport& r) {
  std::ostringstream os;
  os << "target coverage alpha = " << fixed3(r.alpha) << '\n';
  os << "method  group   coverage  mean_length      n\n";
  for (const auto& row : r.rows) {
    std::string m(conformal::method_name(row.method));
    std::string g(group_name(row.group));
    m.resize(6, ' ');
    g.resize(6, ' ');
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s  %s  %8s  %11s  %5zu\n", m.c_str(), g.c_str(),
                  fixed3(row.coverage).c_str(), fixed3(row.mean_length).c_str(), row.n);
    os << buf;
  }
  return os.str();
}

}  // namespace epopr::eval
