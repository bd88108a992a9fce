// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dmmf/dmmf.hpp"
#include "oracles.hpp"

using namespace dmmf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

unsigned threads() { return resolve_threads(std::max(1U, std::thread::hardware_concurrency())); }

Trajectory run_static(const ThresholdProfile<double>& prof, std::int64_t T, std::uint64_t seed,
                      RecordingSpec rec = RecordingSpec::final_only()) {
  const auto cfg = MechanismConfig::from_shares(prof.fair_shares);
  const std::vector<ValueDistribution> d(prof.n(), ValueDistribution::uniform01());
  return run(cfg, d, static_strategies(prof.request_probs), T, seed, rec);
}

// 1. Four-agent split structure and Monte Carlo slopes.
Outcome split_structure() {
  Outcome out;
  const ThresholdProfile<double> prof{{0.25, 0.25, 0.25, 0.25}, {0.1, 0.2, 0.25, 0.5}};
  const auto part = splitting_partition(prof);
  const std::vector<AgentSet> groups{{0}, {1, 2}, {3}};
  const double slopes[] = {0.1, 0.18, 0.18, 0.27};
  if (part.groups != groups) {
    out.pass = false;
    out.detail += "wrong groups; ";
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (std::abs(part.slopes[i] - slopes[i]) > 1e-12) out.pass = false;
  }
  const auto start = Clock::now();
  double worst = 0.0;
  std::vector<double> errs(10, 0.0);
  parallel_for(10, threads(), [&](std::size_t s) {
    const auto traj = run_static(prof, 200000, StreamLayout::replication_seed(1, s));
    for (std::size_t i = 0; i < 4; ++i) {
      errs[s] = std::max(errs[s], std::abs(static_cast<double>(traj.last().wins[i]) / 2e5 - part.slopes[i]));
    }
  });
  worst = *std::max_element(errs.begin(), errs.end());
  const double secs = seconds_since(start);
  out.pass = out.pass && worst <= 0.01 && secs < 10.0;
  out.detail += "groups {1},{2,3},{4}; max |W/T - slope| = " + fmt("%.4f", worst) + " (<= 0.01) over 10 seeds; " +
                fmt("%.2f s", secs) + " (< 10 s)";
  return out;
}

// 2. Collapse for strictly stable profiles, linear separation for witnessed ones.
Outcome global_collapse() {
  Outcome out;
  const std::int64_t T = 1000000;
  const double Td = static_cast<double>(T);
  const double envelope = 8.0 * std::sqrt(Td * std::log(Td));

  Rng gen(derive_seed(2, 0));
  std::vector<ThresholdProfile<double>> stable;
  while (stable.size() < 50) {
    const std::size_t n = 2 + gen.next_u64() % 5;
    const double base = 0.05 + 0.9 * gen.uniform();
    ThresholdProfile<double> prof = ThresholdProfile<double>::symmetric(n, 0.0);
    for (auto& p : prof.request_probs) p = base * (0.85 + 0.15 * gen.uniform());
    AgentSet all(n);
    std::iota(all.begin(), all.end(), 0);
    if (is_stable<double>(all, prof, true)) stable.push_back(prof);
  }
  std::vector<int> within(50, 0);
  std::vector<double> gaps(50, 0.0);
  parallel_for(50, threads(), [&](std::size_t k) {
    const auto traj = run_static(stable[k], T, derive_seed(2, 100 + k));
    const auto d = collapse_diagnostic(traj, splitting_partition(stable[k]));
    gaps[k] = d.gap_global.back();
    within[k] = gaps[k] <= envelope;
  });
  const double frac = std::accumulate(within.begin(), within.end(), 0) / 50.0;

  struct Witnessed {
    ThresholdProfile<double> prof;
    InstabilityWitness w;
  };
  std::vector<Witnessed> unstable;
  while (unstable.size() < 50) {
    const std::size_t n = 2 + gen.next_u64() % 5;
    auto prof = random_profile(gen, n, false);
    if (auto w = find_instability_witness(prof)) unstable.push_back({prof, *w});
  }
  auto group_rate = [](const std::vector<double>& x, const AgentSet& g, const std::vector<double>& alpha) {
    double num = 0.0, den = 0.0;
    for (std::size_t i : g) {
      num += x[i];
      den += alpha[i];
    }
    return num / den;
  };
  std::vector<int> separated(50, 0);
  std::vector<double> ratio(50, 0.0);
  parallel_for(50, threads(), [&](std::size_t k) {
    const auto& [prof, w] = unstable[k];
    const auto slopes = predicted_win_slopes(prof);
    const double predicted = group_rate(slopes, w.high, prof.fair_shares) - group_rate(slopes, w.low, prof.fair_shares);
    const auto traj = run_static(prof, T, derive_seed(2, 1000 + k));
    std::vector<double> wins(prof.n());
    for (std::size_t i = 0; i < prof.n(); ++i) wins[i] = static_cast<double>(traj.last().wins[i]);
    const double gap = group_rate(wins, w.high, prof.fair_shares) - group_rate(wins, w.low, prof.fair_shares);
    ratio[k] = gap / (predicted * Td);
    separated[k] = predicted > 0.0 && gap >= 0.5 * predicted * Td;
  });
  const int sep = std::accumulate(separated.begin(), separated.end(), 0);
  out.pass = frac >= 0.95 && sep == 50;
  out.detail = "stable: " + fmt("%.0f%%", 100.0 * frac) + " within 8 sqrt(T log T) (max gap " +
               fmt("%.0f", *std::max_element(gaps.begin(), gaps.end())) + " vs " + fmt("%.0f", envelope) +
               "); witnessed: " + std::to_string(sep) + "/50 with gap >= 0.5 predicted T (min ratio " +
               fmt("%.3f", *std::min_element(ratio.begin(), ratio.end())) + ")";
  return out;
}

// 3. Slope conservation and brute-force partition agreement.
Outcome slope_conservation() {
  Outcome out;
  Rng rng(derive_seed(3, 0));
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const auto prof = random_profile(rng, 1 + rng.next_u64() % 10, k % 2 == 0);
    const auto s = predicted_win_slopes(prof);
    double miss = 1.0;
    for (double p : prof.request_probs) miss *= 1.0 - p;
    worst = std::max(worst, std::abs(std::accumulate(s.begin(), s.end(), 0.0) - (1.0 - miss)));
  }
  int agree = 0;
  for (int k = 0; k < 500; ++k) {
    const auto prof = random_profile(rng, 1 + rng.next_u64() % 6, k % 3 == 0);
    const auto expect = oracle::brute_force_partition({prof.fair_shares, prof.request_probs});
    agree += expect && *expect == splitting_partition(prof).groups;
  }
  out.pass = worst <= 1e-12 && agree == 500;
  out.detail = "max |sum slopes - (1 - prod(1-p))| = " + fmt("%.2e", worst) + " over 1e4 profiles; oracle agreement " +
               std::to_string(agree) + "/500";
  return out;
}

// 4. Two-point closed forms, best response and the equilibrium scan.
Outcome two_point_game() {
  Outcome out;
  const double q = 0.25;
  const double eps = q / (2.0 + q);
  const auto game = ThresholdGame::symmetric(2, ValueDistribution::two_point(q, eps));
  double util_err = 0.0, deriv_err = 0.0, min_second = 1.0;
  const double h = 1e-5;
  const double h2 = 1e-3;
  for (int a = 0; a <= 200; ++a) {
    for (int b = 0; b <= 200; ++b) {
      const double p1 = q + a * (1.0 - q) / 200.0;
      const double p2 = q + b * (1.0 - q) / 200.0;
      if (!two_point_closed_form_applies(p1, p2, q)) continue;
      const double probs[] = {p1, p2};
      const auto u = game.payoffs(probs);
      const auto cf = two_point_utility(p1, p2, q, eps);
      util_err = std::max({util_err, std::abs(cf.first - u[0]), std::abs(cf.second - u[1])});
      if (two_point_closed_form_applies(p1 - h2, p2, q) && two_point_closed_form_applies(p1 + h2, p2, q)) {
        const double fd = (two_point_utility(p1 + h, p2, q, eps).first - two_point_utility(p1 - h, p2, q, eps).first) /
                          (2.0 * h);
        deriv_err = std::max(deriv_err, std::abs(fd - two_point_du1_dp1(p1, p2, q, eps)));
        min_second = std::min(min_second, two_point_utility(p1 + h2, p2, q, eps).first -
                                              2.0 * two_point_utility(p1, p2, q, eps).first +
                                              two_point_utility(p1 - h2, p2, q, eps).first);
      }
    }
  }
  const double against_one[] = {q, 1.0};
  const auto br = best_response(game, 0, against_one, 1e-3);
  const auto scan = pure_ne_scan(game, 1e-3, std::nullopt, q, 1.0);
  out.pass = util_err <= 1e-12 && deriv_err <= 1e-6 && min_second >= -1e-9 && std::abs(br.argmax - 0.5) <= 1e-3 &&
             scan.certificate_gap > 0.0 && scan.eps_equilibria.empty();
  out.detail = "closed form err " + fmt("%.1e", util_err) + "; derivative err " + fmt("%.1e", deriv_err) +
               "; min 2nd diff " + fmt("%.1e", min_second) + "; BR(p2=1) = " + fmt("%.4f", br.argmax) +
               "; scan gap " + fmt("%.5f", scan.certificate_gap) + ", " + std::to_string(scan.eps_equilibria.size()) +
               " eps-NE at eps = gap/2";
  return out;
}

// 5. Win-Rate Matching converges to p*.
Outcome wrm_convergence() {
  Outcome out;
  const auto start = Clock::now();
  WrmConvergenceSpec spec;
  spec.n = 5;
  spec.schedule = WrmSchedule::linear(1.0, 0.05, 10000.0);
  spec.horizon = 100000;
  spec.replications = 20;
  spec.seed = 5;
  spec.threads = threads();
  const auto rep = wrm_convergence_experiment(spec);
  const double secs = seconds_since(start);
  const double root = oracle::uniform_p_star(5);
  out.pass = rep.fraction_within >= 0.9 && std::abs(rep.p_star - root) <= 1e-6 && secs < 60.0;
  out.detail = "p* = " + fmt("%.6f", rep.p_star) + " (root-finder " + fmt("%.6f", root) + "); " +
               fmt("%.0f%%", 100.0 * rep.fraction_within) + " of 20 within 0.05; " + fmt("%.1f s", secs);
  return out;
}

// 6. A fixed-threshold deviator loses utility against followers.
Outcome deviation_penalty() {
  Outcome out;
  DeviationSpec spec;
  spec.horizon = 100000;
  spec.replications = 20;
  spec.seed = 6;
  spec.threads = threads();
  const auto rep = deviation_experiment(spec);
  out.pass = rep.penalty_significant;
  out.detail = "baseline " + fmt("%.4f", rep.baseline_summary.mean) + ", deviator " +
               fmt("%.4f", rep.deviator_summary.mean) + "; paired diff 95% CI [" + fmt("%.4f", rep.difference.lower()) +
               ", " + fmt("%.4f", rep.difference.upper()) + "]";
  return out;
}

// 7. Utility guarantees.
Outcome utility_bounds() {
  Outcome out;
  int analytic_ok = 0, analytic_total = 0;
  for (const auto& d : {ValueDistribution::two_point(0.25, 1.0 / 9.0), ValueDistribution::uniform01()}) {
    for (std::size_t n : {2, 5, 10, 20}) {
      UtilityBoundSpec spec;
      spec.n = n;
      spec.dist = d;
      spec.monte_carlo = false;
      const auto rep = utility_bound_check(spec);
      ++analytic_total;
      analytic_ok += rep.general_bound;
    }
  }
  int uniform_ok = 0;
  for (std::size_t n : {5, 10, 20, 50}) {
    UtilityBoundSpec spec;
    spec.n = n;
    spec.dist = ValueDistribution::uniform01();
    spec.monte_carlo = false;
    uniform_ok += utility_bound_check(spec).uniform_bound.value_or(false);
  }
  UtilityBoundSpec mc;
  mc.n = 2;
  mc.dist = ValueDistribution::two_point(0.25, 1.0 / 9.0);
  mc.horizon = 1000000;
  mc.seed = 7;
  mc.slack = 0.02;
  const auto rep = utility_bound_check(mc);
  out.pass = analytic_ok == analytic_total && uniform_ok == 4 && rep.monte_carlo_pass;
  out.detail = "general bound " + std::to_string(analytic_ok) + "/" + std::to_string(analytic_total) +
               "; uniform log-rate bound " + std::to_string(uniform_ok) + "/4; Monte Carlo min ratio " +
               fmt("%.4f", rep.min_ratio) + " vs " + fmt("%.4f", 1.0 - 1.0 / std::exp(1.0) - 0.02);
  return out;
}

// 8. Threshold strategies dominate value-dependent ones.
Outcome dominance() {
  Outcome out;
  const auto d = ValueDistribution::two_point(0.25, 1.0 / 9.0);
  Rng rng(derive_seed(8, 0));
  double worst = 0.0;
  for (int k = 0; k < 2000; ++k) {
    const GenericPolicy policy({{1.0 / 9.0, rng.uniform()}, {1.0, rng.uniform()}});
    const auto s = thresholdize(policy, d);
    worst = std::max(worst, std::abs(d.request_probability(d.quantile_threshold(s.p())) -
                                     policy.overall_probability(d)));
  }
  const char* policies[] = {R"({"kind": "generic", "table": [[0.1111111111111111, 0.2], [1.0, 0.6]]})",
                            R"({"kind": "generic", "table": [[0.1111111111111111, 1.0], [1.0, 0.0]]})"};
  bool any_violation = false;
  std::string diffs;
  for (const char* pol : policies) {
    DominanceSpec spec;
    spec.dists.assign(2, d);
    spec.strategies = {Json::parse(pol), Json{{"kind", "static"}, {"p", 0.5}}};
    spec.horizon = 100000;
    spec.replications = 50;
    spec.seed = 8;
    spec.threads = threads();
    const auto rep = dominance_experiment(spec);
    any_violation = any_violation || rep.violation;
    diffs += fmt(" %.4f", rep.difference.mean);
  }
  out.pass = worst <= 1e-12 && !any_violation;
  out.detail = "request prob err " + fmt("%.1e", worst) + "; mean gain (thresholdized - original):" + diffs +
               (any_violation ? "; violation" : "; no one-sided 95% violation");
  return out;
}

// 9. Determinism and serialization round trips.
Outcome determinism() {
  Outcome out;
  const auto base = fs::temp_directory_path() / "dmmf_acceptance";
  fs::remove_all(base);
  const std::vector<std::pair<std::string, Json>> runs{
      {"simulate", Json::parse(R"({"n": 4, "agents": [{"strategy": {"kind": "static", "p": 0.1}},
          {"strategy": {"kind": "static", "p": 0.2}}, {"strategy": {"kind": "static", "p": 0.25}},
          {"strategy": {"kind": "wrm"}}], "horizon": 20000, "replications": 2, "seed": 9,
          "recording": {"mode": "checkpoints"}})")},
      {"deviation", Json::parse(R"({"n": 3, "horizon": 5000, "replications": 3, "seed": 9})")},
      {"wrm-converge", Json::parse(R"({"n": 3, "horizon": 5000, "replications": 3, "seed": 9})")},
      {"analyze", Json::parse(R"({"n": 3, "agents": [{"strategy": {"kind": "static", "p": 0.2}},
          {"strategy": {"kind": "static", "p": 0.5}}, {"strategy": {"kind": "static", "p": 0.9}}],
          "horizon": 5000, "seed": 9})")}};
  int identical = 0, files = 0, parsed = 0;
  for (const auto& [cmd, doc] : runs) {
    const auto cfg = ExperimentConfig::from_json(doc);
    const auto a = base / (cmd + "_a");
    const auto b = base / (cmd + "_b");
    write_result(run_experiment(cmd, cfg), a);
    write_result(run_experiment(cmd, cfg), b);
    for (const auto& entry : fs::directory_iterator(a)) {
      auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
      };
      const std::string left = slurp(entry.path());
      ++files;
      identical += left == slurp(b / entry.path().filename());
      try {
        if (entry.path().extension() == ".json") {
          const auto j = Json::parse(left);
          parsed += j.contains("all_checks_passed") && Json::parse(j.dump()) == j;
        } else if (entry.path().filename().string().rfind("trajectory_", 0) == 0) {
          std::stringstream ss(left);
          const auto rows = read_trajectory_csv(ss);
          std::stringstream again;
          again << kTrajectoryHeader << '\n';
          for (const auto& r : rows) {
            again << r.t << ',' << r.agent << ',' << r.wins << ',' << format_double(r.utility) << ','
                  << (r.requested ? 1 : 0) << ',' << (r.won ? 1 : 0) << '\n';
          }
          parsed += again.str() == left;
        } else {
          std::stringstream ss(left);
          std::string header, line;
          std::getline(ss, header);
          const auto cols = std::count(header.begin(), header.end(), ',');
          bool ok = !header.empty();
          while (std::getline(ss, line)) {
            ok = ok && std::count(line.begin(), line.end(), ',') == cols;
            std::stringstream cells(line);
            std::string cell;
            while (std::getline(cells, cell, ',')) parse_double(cell);
          }
          parsed += ok;
        }
      } catch (const std::exception&) {
      }
    }
  }
  fs::remove_all(base);
  out.pass = files > 0 && identical == files && parsed == files;
  out.detail = std::to_string(identical) + "/" + std::to_string(files) + " files byte-identical; " +
               std::to_string(parsed) + "/" + std::to_string(files) + " pass schema round trip";
  return out;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"split structure", split_structure},
      {"global collapse", global_collapse},
      {"slope conservation", slope_conservation},
      {"two-point game", two_point_game},
      {"WRM convergence", wrm_convergence},
      {"deviation penalty", deviation_penalty},
      {"utility bounds", utility_bounds},
      {"threshold dominance", dominance},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    const auto start = Clock::now();
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(),
                o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
