#pragma once

// The canned acceptance experiments. Each criterion reports its measured
// value next to the threshold it is judged against.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <ostream>

#include <unistd.h>

#include "dop/analysis/oracles.hpp"
#include "dop/analysis/properties.hpp"
#include "dop/harness/runner.hpp"
#include "dop/nn/grad_check.hpp"

namespace dop::harness {

struct CriterionResult {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string measured;
  std::string threshold;
  std::string note;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  int seeds = 12;
  std::uint64_t seed_offset = 0;
  int parallel = 1;
  // Training CSVs of the learning experiments go here when set.
  std::optional<std::string> out_dir;
};

inline std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

inline std::string ratio_str(long a, long b) { return std::to_string(a) + "/" + std::to_string(b); }

// At least the fraction `num/den` of `total`, rounded up; 10 of 12 seeds
// stays 10 of 12 and scales with the seed count.
inline long required_count(long num, long den, long total) { return (num * total + den - 1) / den; }

namespace accept_detail {

inline Vector random_normal(Rng& rng, int n, double scale = 1.0) {
  Vector v(n);
  for (int k = 0; k < n; ++k) v[k] = normal(rng, 0.0, scale);
  return v;
}

inline Vector random_policy(Rng& rng, int A, double scale = 2.0) {
  const Vector z = random_normal(rng, A, scale);
  Vector p = (z.array() - z.maxCoeff()).exp();
  return p / p.sum();
}

inline std::vector<JointDiscrete> all_joint(int n, int A) {
  std::vector<JointDiscrete> out;
  for (long j = 0; j < envs::joint_count(n, A); ++j) out.push_back(envs::unflatten_joint(j, n, A));
  return out;
}

inline void perturb(nn::ParamRefs refs, Rng& rng, double scale) {
  for (std::size_t t = 0; t < refs.size(); ++t)
    for (Eigen::Index k = 0; k < refs[t].size(); ++k) refs[t].data()[k] += normal(rng, 0.0, scale);
}

// Max relative error between `analytic` (ordered like `refs`) and central
// differences of f.
inline double fd_param_check(nn::ParamRefs refs, const nn::Grad& analytic, const std::function<double()>& f,
                             double h = nn::kFiniteDifferenceStep) {
  if (analytic.size() != refs.size()) throw ShapeError("gradient check: tensor count mismatch");
  double worst = 0.0;
  for (std::size_t t = 0; t < refs.size(); ++t) {
    for (Eigen::Index k = 0; k < refs[t].size(); ++k) {
      double& p = refs[t].data()[k];
      const double orig = p;
      p = orig + h;
      const double up = f();
      p = orig - h;
      const double down = f();
      p = orig;
      worst = std::max(worst, nn::relative_error(analytic[t].data()[k], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

// Same for a vector argument x.
inline double fd_vector_check(Vector& x, const Vector& analytic, const std::function<double()>& f,
                              double h = nn::kFiniteDifferenceStep) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double orig = x[k];
    x[k] = orig + h;
    const double up = f();
    x[k] = orig - h;
    const double down = f();
    x[k] = orig;
    worst = std::max(worst, nn::relative_error(analytic[k], (up - down) / (2.0 * h)));
  }
  return worst;
}

inline long numel(nn::ParamRefs refs) {
  long n = 0;
  for (std::size_t t = 0; t < refs.size(); ++t) n += refs[t].size();
  return n;
}

inline std::vector<std::uint64_t> seed_list(const AcceptanceOptions& o) {
  std::vector<std::uint64_t> s;
  for (int k = 0; k < o.seeds; ++k) s.push_back(static_cast<std::uint64_t>(k) + o.seed_offset);
  return s;
}

inline void maybe_write(const AcceptanceOptions& o, const std::string& suite, const std::string& run_id,
                        const std::vector<MetricRecord>& rows) {
  if (!o.out_dir) return;
  const auto dir = std::filesystem::path(*o.out_dir) / suite;
  std::filesystem::create_directories(dir);
  write_csv(dir / (run_id + ".csv"), rows);
}

template <typename T>
T& as(algo::Trainer& t) {
  auto* p = dynamic_cast<T*>(&t);
  if (!p) throw StateError("acceptance: unexpected trainer type");
  return *p;
}

}  // namespace accept_detail

// ---- 1, 2: expectation decomposition -------------------------------------

inline CriterionResult check_expectation_decomposition(std::uint64_t seed = 1, int instances = 1000) {
  using namespace accept_detail;
  algo::WallClock clock;
  Rng rng(seed);
  double worst = 0.0;
  for (int m = 0; m < instances; ++m) {
    critic::CriticConfig cc;
    cc.n_agents = 2 + static_cast<int>(uniform_index(rng, 3));
    cc.n_actions = 2 + static_cast<int>(uniform_index(rng, 5));
    cc.state_dim = 3;
    cc.hidden = {8};
    cc.per_agent_networks = uniform01(rng) < 0.5;
    cc.normalize_mixing = uniform01(rng) < 0.5;
    critic::DecomposedCritic critic(cc, rng);
    const Vector s = random_normal(rng, cc.state_dim);
    std::vector<Vector> pi;
    for (int i = 0; i < cc.n_agents; ++i) pi.push_back(random_policy(rng, cc.n_actions));
    const auto joints = all_joint(cc.n_agents, cc.n_actions);
    const auto pass = critic.forward(s.replicate(1, static_cast<Eigen::Index>(joints.size())), joints);
    const RowVector q = pass.q_tot;
    const double truth = analysis::brute_force_expectation(
        [&](const JointDiscrete& a) { return q[envs::flatten_joint(a, cc.n_actions)]; }, pi);
    worst = std::max(worst, std::abs(critic.expected_q(s, pi) - truth));
  }
  CriterionResult r;
  r.id = 1;
  r.title = "expectation decomposition";
  r.seconds = clock.seconds();
  r.pass = worst <= 1e-9 && r.seconds < 10.0;
  r.measured = "max |expected_q - brute force| = " + fmt(worst) + " over " + std::to_string(instances) +
               " pairs in " + fmt(r.seconds, 3) + " s";
  r.threshold = "<= 1e-9, runtime < 10 s";
  return r;
}

inline CriterionResult check_read_complexity() {
  const envs::MatrixGame env;
  const int n = env.spec().n_agents, A = env.spec().action_space.size;
  Rng rng(7);
  critic::CriticConfig cc;
  cc.n_agents = n;
  cc.n_actions = A;
  cc.state_dim = env.spec().state_dim;
  critic::DecomposedCritic critic(cc, rng);
  std::vector<Vector> pi(n, Vector::Constant(A, 1.0 / A));
  const Vector s = Vector::Zero(cc.state_dim);

  critic::ReadCounter direct;
  critic.expected_q(s, pi, critic::Params::Online, &direct);
  critic::ReadCounter in_target;
  const auto pass = critic.forward_values(Matrix(s));
  algo::expectation_at(critic, pass, 0, pi, {}, nullptr, &in_target);
  critic::ReadCounter exhaustive;
  algo::expectation_at(critic, pass, 0, pi, {algo::ExpectationMode::Exhaustive, 0}, nullptr, &exhaustive);
  long oracle = 0;
  analysis::brute_force_expectation([](const JointDiscrete&) { return 0.0; }, pi, &oracle);

  CriterionResult r;
  r.id = 2;
  r.title = "expectation read complexity";
  const long nA = static_cast<long>(n) * A, An = envs::joint_count(n, A);
  r.pass = direct.reads == nA && in_target.reads == nA && exhaustive.reads == An && oracle == An;
  r.measured = "decomposed reads " + std::to_string(direct.reads) + " (target path " +
               std::to_string(in_target.reads) + "), exhaustive " + std::to_string(exhaustive.reads) +
               ", oracle " + std::to_string(oracle);
  r.threshold = "n|A| = " + std::to_string(nA) + " vs |A|^n = " + std::to_string(An);
  return r;
}

// ---- 3, 4: tabular properties -------------------------------------------

inline CriterionResult check_fact1(std::uint64_t seed = 3) {
  algo::WallClock clock;
  const auto rep = analysis::fact1_sweep(seed, 100);
  CriterionResult r;
  r.id = 3;
  r.title = "order preservation";
  r.seconds = clock.seconds();
  r.pass = rep.violations == 0 && r.seconds < 120.0;
  r.measured = std::to_string(rep.violations) + " violations over " + std::to_string(rep.pairs) +
               " ordered pairs in " + std::to_string(rep.instances) + " instances, " + fmt(r.seconds, 3) + " s";
  r.threshold = "0 violations, runtime < 2 min";
  return r;
}

inline CriterionResult check_prop1(std::uint64_t seed = 4) {
  algo::WallClock clock;
  const auto rep = analysis::prop1_sweep(seed, 50, 1e-4);
  CriterionResult r;
  r.id = 4;
  r.title = "policy improvement";
  r.seconds = clock.seconds();
  r.pass = rep.improvement_failures == 0 && r.seconds < 300.0;
  r.measured = std::to_string(rep.improvement_failures) + " failures in " + std::to_string(rep.checked) +
               " checked instances (" + std::to_string(rep.precondition_violations) +
               " reported as violating the monotone precondition), min J_new - J_old = " + fmt(rep.min_improvement) +
               ", " + fmt(r.seconds, 3) + " s";
  r.threshold = "J_new >= J_old - 1e-9 whenever the precondition holds, runtime < 5 min";
  if (rep.checked == 0) r.note = "no instance satisfied the precondition";
  return r;
}

// ---- 5: matrix game --------------------------------------------------------

inline const char* kMatrixGameConfig = R"({
  "algorithm": ["stochastic_dop", "coma", "maddpg"],
  "environment": {"name": "matrix_game"},
  "hyperparameters": {
    "critic_lr": 0.001,
    "actor_lr": 0.0005,
    "epsilon_anneal_steps": 10000,
    "actor_warmup_steps": 3000,
    "advantage": true
  },
  "seeds": [0],
  "total_steps": 10000,
  "metric_period": 1000,
  "variance_samples": 30,
  "output_dir": "acceptance/matrix_game"
})";

// Fits a scalar joint critic with about as many parameters as the DOP
// critic to the (state, joint action, reward) samples in DOP's off-policy
// buffer and returns its bias over all joint actions. One-step episodes
// terminate, so the regression target is the reward itself.
inline double joint_critic_bias_on_buffer(algo::StochasticDop& dop, const envs::Environment& env, std::uint64_t seed,
                                          int updates = 5000, int batch = 48, double lr = 1e-3) {
  const auto truth = algo::truth_table(env);
  if (!truth) throw UnsupportedError("joint critic bias needs a one-shot game");
  const auto& spec = env.spec();
  const long target = accept_detail::numel(dop.critic().param_refs());
  critic::JointCriticConfig jc;
  jc.n_agents = spec.n_agents;
  jc.state_dim = spec.state_dim;
  jc.n_actions = spec.action_space.size;
  const long in = jc.state_dim + static_cast<long>(jc.n_agents) * jc.n_actions;
  int best = 1;
  for (int h = 1; h <= 512; ++h) {
    auto count = [&](long w) { return (in + 1) * w + (w + 1) * w + (w + 1); };
    if (std::abs(count(h) - target) < std::abs(count(best) - target)) best = h;
  }
  jc.hidden = {best, best};
  SeedTree seeds(seed);
  Rng init = seeds.rng_for("joint_fit_init");
  Rng draw = seeds.rng_for("joint_fit_buffer");
  critic::JointCritic joint(jc, init);
  nn::RmsProp opt({lr, 0.99, 1e-8});
  const auto& buf = dop.buffers().off;
  for (int u = 0; u < updates; ++u) {
    const auto eps = buf.sample(batch, draw);
    Matrix states(spec.state_dim, batch);
    std::vector<JointDiscrete> acts;
    RowVector r(batch);
    for (int b = 0; b < batch; ++b) {
      const auto& st = eps[b]->steps.front();
      states.col(b) = st.state;
      acts.push_back(st.actions);
      r[b] = st.reward;
    }
    const auto pass = joint.forward(joint.encode(states, acts));
    const Matrix up = (pass.out - r) / static_cast<double>(batch);
    auto refs = joint.param_refs();
    opt.step(refs, joint.backward(pass, up).params);
  }
  const auto [s, inputs] = dop.probe_point();
  const auto joints = accept_detail::all_joint(spec.n_agents, spec.action_space.size);
  const RowVector q = joint.q_tot(s.replicate(1, static_cast<Eigen::Index>(joints.size())), joints);
  return (q.transpose() - *truth).cwiseAbs().mean();
}

struct MatrixSeedOutcome {
  double final_eval = 0.0;
  std::vector<int> argmax;
  double dop_bias = 0.0;
  double joint_bias = 0.0;
  // [algorithm][checkpoint] per-agent variance reports
  std::vector<std::vector<analysis::GradientVarianceReport>> variance;
};

inline CriterionResult check_matrix_game(const AcceptanceOptions& opt) {
  using namespace accept_detail;
  algo::WallClock clock;
  RunConfig cfg = parse_config(kMatrixGameConfig, "matrix_game acceptance");
  const auto seeds = seed_list(opt);
  std::vector<MatrixSeedOutcome> out(seeds.size());
  parallel_for(seeds.size(), opt.parallel, [&](std::size_t k) {
    const auto env = make_environment(cfg);
    auto& o = out[k];
    for (const auto& algorithm : cfg.algorithms) {
      const auto settings = run_settings(cfg, algorithm, seeds[k]);
      auto trainer = make_trainer(cfg, algorithm, *env, settings);
      MetricBuffer buf;
      trainer->run(buf.sink());
      maybe_write(opt, "matrix_game", settings.run_id, buf.records);
      if (algorithm == "stochastic_dop") {
        auto& dop = as<algo::StochasticDop>(*trainer);
        o.final_eval = buf.records.back().eval_return.value_or(0.0);
        o.argmax = dop.local_argmax();
        o.dop_bias = dop.bias().value_or(0.0);
        o.joint_bias = joint_critic_bias_on_buffer(dop, *env, seeds[k]);
        o.variance.push_back(dop.variance_log());
      } else if (algorithm == "coma") {
        o.variance.push_back(as<baselines::Coma>(*trainer).variance_log());
      } else {
        o.variance.push_back(as<baselines::MaddpgDiscrete>(*trainer).variance_log());
      }
    }
  });

  const long N = static_cast<long>(seeds.size());
  // (a)
  long solved = 0;
  for (const auto& o : out) solved += (o.final_eval == envs::MatrixGame::kWin);
  const bool a_ok = solved >= required_count(10, 12, N);
  // (b): seed means per agent at every checkpoint after step 1000.
  bool b_ok = true;
  int checkpoints = 0;
  double worst_dop = 0.0, min_coma = std::numeric_limits<double>::infinity(), min_maddpg = min_coma;
  const auto& ref = out.front().variance.front();
  for (std::size_t c = 0; c < ref.size(); ++c) {
    if (ref[c].step <= 1000) continue;
    ++checkpoints;
    const int n = static_cast<int>(ref[c].per_agent.size());
    for (int i = 0; i < n; ++i) {
      double m[3] = {0.0, 0.0, 0.0};
      for (const auto& o : out)
        for (int alg = 0; alg < 3; ++alg) {
          if (o.variance[alg][c].step != ref[c].step) throw StateError("matrix game: checkpoints out of step");
          m[alg] += o.variance[alg][c].per_agent[i] / N;
        }
      worst_dop = std::max(worst_dop, m[0]);
      min_coma = std::min(min_coma, m[1]);
      min_maddpg = std::min(min_maddpg, m[2]);
      b_ok = b_ok && (m[0] < m[1] && 2.0 * m[0] <= m[1]) && (m[0] < m[2] && 2.0 * m[0] <= m[2]);
    }
  }
  b_ok = b_ok && checkpoints > 0;
  // (c)
  long matched = 0;
  const std::vector<int> optimal(envs::MatrixGame::kOptimal.begin(), envs::MatrixGame::kOptimal.end());
  for (const auto& o : out)
    if (o.final_eval == envs::MatrixGame::kWin && o.argmax == optimal) ++matched;
  const bool c_ok = solved > 0 && matched == solved;
  // (d)
  long positive = 0, joint_lower = 0;
  double dop_mean = 0.0, joint_mean = 0.0;
  for (const auto& o : out) {
    positive += (o.dop_bias > 0.0);
    joint_lower += (o.joint_bias < o.dop_bias);
    dop_mean += o.dop_bias / N;
    joint_mean += o.joint_bias / N;
  }
  const bool d_ok = positive == N && joint_mean < dop_mean;

  CriterionResult r;
  r.id = 5;
  r.title = "matrix game";
  r.seconds = clock.seconds();
  r.pass = a_ok && b_ok && c_ok && d_ok && r.seconds < 900.0;
  r.measured = std::string("(a) ") + (a_ok ? "ok " : "FAIL ") + ratio_str(solved, N) + " seeds return 10; (b) " +
               (b_ok ? "ok " : "FAIL ") + "max DOP variance " + fmt(worst_dop) + " vs min COMA " + fmt(min_coma) +
               " / MADDPG " + fmt(min_maddpg) + " over " + std::to_string(checkpoints) + " checkpoints; (c) " +
               (c_ok ? "ok " : "FAIL ") + ratio_str(matched, solved) + " solved seeds argmax (1,5,9); (d) " +
               (d_ok ? "ok " : "FAIL ") + "DOP bias " + fmt(dop_mean) + " (>0 in " + ratio_str(positive, N) +
               ") vs joint " + fmt(joint_mean) + " (lower in " + ratio_str(joint_lower, N) + "); " + fmt(r.seconds, 4) +
               " s";
  r.threshold = "(a) >= " + std::to_string(required_count(10, 12, N)) +
                " seeds; (b) DOP < others by factor >= 2 at every checkpoint after step 1000; (c) all solved seeds; "
                "(d) DOP bias > 0 in every seed and joint mean bias lower; runtime < 15 min";
  return r;
}

// ---- 6: tree-backup oracle ------------------------------------------------

inline CriterionResult check_tree_backup(std::uint64_t seed = 6, int episodes = 1000) {
  using namespace accept_detail;
  algo::WallClock clock;
  Rng rng(seed);
  double worst = 0.0;
  const int n = 2, A = 2, S = 2, O = 2;
  for (int m = 0; m < episodes; ++m) {
    critic::CriticConfig cc;
    cc.n_agents = n;
    cc.n_actions = A;
    cc.state_dim = S;
    cc.hidden = {6};
    cc.per_agent_networks = uniform01(rng) < 0.5;
    critic::DecomposedCritic critic(cc, rng);
    algo::StochasticPolicySet pol(n, O, A, {5}, rng);
    // Online and target copies differ so the test sees which one is used.
    perturb(critic.param_refs(), rng, 0.1);
    for (int i = 0; i < n; ++i) {
      nn::ParamRefs refs;
      refs.add(pol.net(i).params());
      perturb(refs, rng, 0.3);
    }

    envs::Episode ep;
    const int T = 1 + static_cast<int>(uniform_index(rng, 8));
    for (int t = 0; t < T; ++t) {
      envs::EpisodeStep st;
      for (int i = 0; i < n; ++i) st.observations.push_back(random_normal(rng, O));
      st.state = random_normal(rng, S);
      for (int i = 0; i < n; ++i) {
        st.actions.push_back(static_cast<int>(uniform_index(rng, A)));
        st.behavior_probs.push_back(uniform(rng, 0.1, 1.0));
      }
      st.reward = normal(rng);
      ep.steps.push_back(st);
    }
    for (int i = 0; i < n; ++i) ep.final_observations.push_back(random_normal(rng, O));
    ep.final_state = random_normal(rng, S);
    ep.terminated = uniform01(rng) < 0.5;

    algo::TbConfig tb;
    tb.tb_steps = 1 + static_cast<int>(uniform_index(rng, 6));
    tb.lambda_tb = uniform01(rng);
    const double gamma = uniform(rng, 0.5, 1.0);
    algo::TermsOptions topt;
    topt.bootstrap_on_truncation = uniform01(rng) < 0.5;
    const int t0 = static_cast<int>(uniform_index(rng, T));
    const double y = algo::tb_target(ep, t0, critic, pol, tb, gamma, topt);

    analysis::OracleEpisode oe;
    for (const auto& st : ep.steps) {
      oe.actions.push_back(st.actions);
      oe.rewards.push_back(st.reward);
    }
    oe.terminated = ep.terminated;
    oe.bootstrap_on_truncation = topt.bootstrap_on_truncation;
    oe.q = [&](int t, const JointDiscrete& a) {
      const Vector& s = t < T ? ep.steps[t].state : ep.final_state;
      return critic.eval(s, a, critic::Params::Target).q_tot;
    };
    oe.pi = [&](int t) {
      std::vector<Vector> p;
      for (int i = 0; i < n; ++i)
        p.push_back(pol.probs(i, t < T ? ep.steps[t].observations[i] : ep.final_observations[i], true));
      return p;
    };
    worst = std::max(worst, std::abs(y - analysis::tree_backup_oracle(oe, t0, tb.tb_steps, gamma, tb.lambda_tb)));
  }
  CriterionResult r;
  r.id = 6;
  r.title = "tree-backup oracle equivalence";
  r.seconds = clock.seconds();
  r.pass = worst <= 1e-9;
  r.measured = "max |tb_target - joint tree backup| = " + fmt(worst) + " over " + std::to_string(episodes) + " episodes";
  r.threshold = "<= 1e-9";
  return r;
}

// ---- 7: gradients -----------------------------------------------------------

struct GradientCheckReport {
  std::vector<std::pair<std::string, double>> worst;  // per network kind
  double max() const {
    double m = 0.0;
    for (const auto& w : worst) m = std::max(m, w.second);
    return m;
  }
};

inline GradientCheckReport gradient_checks(int seeds = 20) {
  using namespace accept_detail;
  GradientCheckReport rep;
  auto record = [&](const std::string& kind, double e) {
    for (auto& w : rep.worst)
      if (w.first == kind) return void(w.second = std::max(w.second, e));
    rep.worst.emplace_back(kind, e);
  };
  const int B = 4;
  for (int sd = 0; sd < seeds; ++sd) {
    Rng rng(1000 + sd);

    {  // actor log-probability gradient
      algo::StochasticPolicySet pol(1, 3, 4, {8}, rng);
      Matrix x(3, B);
      for (int b = 0; b < B; ++b) x.col(b) = random_normal(rng, 3);
      std::vector<int> acts;
      RowVector coeff(B);
      for (int b = 0; b < B; ++b) {
        acts.push_back(static_cast<int>(uniform_index(rng, 4)));
        coeff[b] = normal(rng);
      }
      const nn::Grad g = pol.log_prob_grad(0, x, acts, coeff);
      nn::ParamRefs refs;
      refs.add(pol.net(0).params());
      record("actor log-prob", fd_param_check(refs, g, [&] {
               const Matrix p = pol.probs(0, x);
               double f = 0.0;
               for (int b = 0; b < B; ++b) f += coeff[b] * std::log(p(acts[b], b));
               return f;
             }));
    }

    for (bool discrete : {true, false}) {  // decomposed critic parameters and action inputs
      critic::CriticConfig cc;
      cc.n_agents = 3;
      cc.state_dim = 2;
      cc.discrete = discrete;
      cc.n_actions = 4;
      cc.action_dim = 2;
      cc.hidden = {8, 8};
      cc.per_agent_networks = sd % 2 == 1;
      cc.normalize_mixing = sd % 4 < 2;
      critic::DecomposedCritic critic(cc, rng);
      Matrix s(2, B);
      for (int b = 0; b < B; ++b) s.col(b) = random_normal(rng, 2);
      RowVector dq(B);
      for (int b = 0; b < B; ++b) dq[b] = normal(rng);
      std::vector<JointDiscrete> da(B);
      std::vector<JointContinuous> ca(B);
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < cc.n_agents; ++i) {
          da[b].push_back(static_cast<int>(uniform_index(rng, cc.n_actions)));
          ca[b].push_back(random_normal(rng, cc.action_dim, 0.5));
        }
      auto q = [&] {
        return discrete ? critic.forward(s, da).q_tot : critic.forward(s, ca).q_tot;
      };
      const auto pass = discrete ? critic.forward(s, da) : critic.forward(s, ca);
      const nn::Grad g = critic.backward(pass, dq);
      record(discrete ? "decomposed critic params (discrete)" : "decomposed critic params (continuous)",
             fd_param_check(critic.param_refs(), g, [&] { return q().dot(dq); }));
      if (!discrete) {
        const auto ag = critic.action_gradients(pass);
        for (int b = 0; b < B; ++b)
          for (int i = 0; i < cc.n_agents; ++i) {
            Vector& a = ca[b][i];
            record("decomposed critic action input", fd_vector_check(a, ag[i].col(b), [&] { return q()[b]; }));
          }
      }
    }

    {  // joint critic parameters and action inputs
      critic::JointCriticConfig jc;
      jc.n_agents = 3;
      jc.state_dim = 2;
      jc.discrete = false;
      jc.action_dim = 2;
      jc.hidden = {8, 8};
      critic::JointCritic joint(jc, rng);
      Matrix s(2, B);
      for (int b = 0; b < B; ++b) s.col(b) = random_normal(rng, 2);
      std::vector<JointContinuous> ca(B);
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < jc.n_agents; ++i) ca[b].push_back(random_normal(rng, 2, 0.5));
      RowVector u(B);
      for (int b = 0; b < B; ++b) u[b] = normal(rng);
      const auto pass = joint.forward(joint.encode(s, ca));
      const auto bw = joint.backward(pass, Matrix(u));
      record("joint critic params", fd_param_check(joint.param_refs(), bw.params, [&] { return joint.q_tot(s, ca).dot(u); }));
      for (int i = 0; i < jc.n_agents; ++i) {
        const Matrix ag = joint.action_input_grad(bw, i);
        for (int b = 0; b < B; ++b) {
          Vector& a = ca[b][i];
          record("joint critic action input", fd_vector_check(a, ag.col(b), [&] { return joint.q_tot(s, ca).dot(u); }));
        }
      }
    }

    {  // deterministic actor through the action squashing
      envs::ActionSpace space = envs::ActionSpace::continuous(2, -1.0, 1.0);
      algo::DeterministicPolicySet actors(1, 3, space, {8}, rng);
      Matrix x(3, B), up(2, B);
      for (int b = 0; b < B; ++b) {
        x.col(b) = random_normal(rng, 3);
        up.col(b) = random_normal(rng, 2);
      }
      nn::ParamRefs refs;
      refs.add(actors.net(0).params());
      record("deterministic actor", fd_param_check(refs, actors.action_backward(0, x, up), [&] {
               return (actors.actions(0, x).array() * up.array()).sum();
             }));
    }

    {  // Gumbel-softmax relaxation
      Vector logits = random_normal(rng, 5);
      const Vector noise = baselines::gumbel_noise(5, rng);
      const Vector u = random_normal(rng, 5);
      const double T = uniform(rng, 0.5, 2.0);
      auto relaxed = [&] { return baselines::softmax_tempered(logits + noise, T); };
      record("gumbel-softmax", fd_vector_check(logits, baselines::gumbel_softmax_backward(relaxed(), u, T),
                                               [&] { return relaxed().dot(u); }));
    }
  }
  return rep;
}

inline CriterionResult check_gradients(int seeds = 20) {
  algo::WallClock clock;
  const auto rep = gradient_checks(seeds);
  CriterionResult r;
  r.id = 7;
  r.title = "gradient correctness";
  r.seconds = clock.seconds();
  r.pass = rep.max() < 1e-4;
  r.measured = "max relative error " + fmt(rep.max()) + " (";
  for (std::size_t k = 0; k < rep.worst.size(); ++k)
    r.measured += (k ? ", " : "") + rep.worst[k].first + " " + fmt(rep.worst[k].second, 2);
  r.measured += ") over " + std::to_string(seeds) + " seeds";
  r.threshold = "< 1e-4";
  return r;
}

// ---- 8: aggregation ---------------------------------------------------------

inline const char* kAggregationConfig = R"({
  "algorithm": ["deterministic_dop", "maddpg"],
  "environment": {"name": "aggregation"},
  "hyperparameters": {
    "batch": 64,
    "critic_hidden": [32, 32],
    "actor_hidden": [32],
    "train_every": 4
  },
  "seeds": [0],
  "total_steps": 300000,
  "metric_period": 5000,
  "output_dir": "acceptance/aggregation"
})";

// Trailing moving average.
inline std::vector<double> smooth(const std::vector<double>& x, int window = 5) {
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    acc += x[k];
    if (k >= static_cast<std::size_t>(window)) acc -= x[k - window];
    out.push_back(acc / std::min<double>(k + 1, window));
  }
  return out;
}

struct CurveStats {
  double final_mean = 0.0;   // mean training return over the final 10% of steps
  double peak = 0.0;         // max smoothed training return
  double final_smoothed = 0.0;
  double best_raw = -std::numeric_limits<double>::infinity();
};

inline CurveStats curve_stats(const std::vector<MetricRecord>& rows, long total_steps) {
  CurveStats c;
  std::vector<double> ret;
  double tail = 0.0;
  int tail_n = 0;
  for (const auto& r : rows) {
    if (!r.train_return) continue;
    ret.push_back(*r.train_return);
    c.best_raw = std::max(c.best_raw, *r.train_return);
    if (r.step > total_steps - total_steps / 10) {
      tail += *r.train_return;
      ++tail_n;
    }
  }
  if (ret.empty()) throw StateError("no training returns were logged");
  const auto s = smooth(ret);
  c.final_mean = tail_n ? tail / tail_n : ret.back();
  c.peak = *std::max_element(s.begin(), s.end());
  c.final_smoothed = s.back();
  return c;
}

inline CriterionResult check_aggregation(const AcceptanceOptions& opt) {
  using namespace accept_detail;
  algo::WallClock clock;
  RunConfig cfg = parse_config(kAggregationConfig, "aggregation acceptance");
  const auto seeds = seed_list(opt);
  std::vector<CurveStats> dop(seeds.size()), maddpg(seeds.size());
  parallel_for(seeds.size(), opt.parallel, [&](std::size_t k) {
    const auto env = make_environment(cfg);
    for (const auto& algorithm : cfg.algorithms) {
      const auto settings = run_settings(cfg, algorithm, seeds[k]);
      auto trainer = make_trainer(cfg, algorithm, *env, settings);
      MetricBuffer buf;
      trainer->run(buf.sink());
      maybe_write(opt, "aggregation", settings.run_id, buf.records);
      (algorithm == "maddpg" ? maddpg : dop)[k] = curve_stats(buf.records, cfg.total_steps);
    }
  });
  const long N = static_cast<long>(seeds.size());
  double dop_final = 0.0, maddpg_final = 0.0, best = -std::numeric_limits<double>::infinity();
  long stable = 0;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    dop_final += dop[k].final_mean / N;
    maddpg_final += maddpg[k].final_mean / N;
    best = std::max({best, dop[k].best_raw, maddpg[k].best_raw});
    stable += (dop[k].peak - dop[k].final_smoothed < 0.2 * std::abs(dop[k].peak));
  }
  CriterionResult r;
  r.id = 8;
  r.title = "aggregation";
  r.seconds = clock.seconds();
  r.pass = dop_final >= maddpg_final && stable >= required_count(9, 12, N);
  r.measured = "final-10% return DOP " + fmt(dop_final) + " vs MADDPG " + fmt(maddpg_final) +
               "; degradation < 20% of |peak| in " + ratio_str(stable, N) + " seeds; " +
               std::to_string(cfg.total_steps) + " steps, " + fmt(r.seconds, 4) + " s";
  r.threshold = "DOP >= MADDPG and >= " + std::to_string(required_count(9, 12, N)) + " stable seeds";
  if (best <= -10.0)
    r.note = "no training period of either algorithm averaged above -10: neither found the goal, so the comparison is "
             "between flat curves";
  return r;
}

// ---- 9: mill ------------------------------------------------------------------

inline const char* kMillConfig = R"({
  "algorithm": "deterministic_dop",
  "environment": {"name": "mill"},
  "hyperparameters": {
    "batch": 64,
    "critic_hidden": [32, 32],
    "actor_hidden": [32],
    "train_every": 2
  },
  "seeds": [0],
  "total_steps": 12000,
  "metric_period": 1000,
  "output_dir": "acceptance/mill"
})";

inline CriterionResult check_mill(const AcceptanceOptions& opt) {
  using namespace accept_detail;
  algo::WallClock clock;
  RunConfig cfg = parse_config(kMillConfig, "mill acceptance");
  const auto seeds = seed_list(opt);
  std::vector<int> positive(seeds.size(), 0);
  int agents = 0;
  double final_eval = 0.0;
  std::mutex m;
  parallel_for(seeds.size(), opt.parallel, [&](std::size_t k) {
    const auto env = make_environment(cfg);
    const auto settings = run_settings(cfg, cfg.algorithms.front(), seeds[k]);
    auto trainer = make_trainer(cfg, cfg.algorithms.front(), *env, settings);
    MetricBuffer buf;
    trainer->run(buf.sink());
    maybe_write(opt, "mill", settings.run_id, buf.records);
    const auto dirs = as<algo::DeterministicDop>(*trainer).credit_directions();
    int pos = 0;
    for (const auto& d : dirs) pos += d[0] > 0.0;
    std::lock_guard<std::mutex> lock(m);
    positive[k] = pos;
    agents = static_cast<int>(dirs.size());
    final_eval += buf.records.back().eval_return.value_or(0.0) / static_cast<double>(seeds.size());
  });
  const long need = required_count(9, 10, agents);
  long good = 0;
  std::string per_seed;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    good += positive[k] >= need;
    per_seed += (k ? " " : "") + std::to_string(positive[k]);
  }
  const long N = static_cast<long>(seeds.size());
  CriterionResult r;
  r.id = 9;
  r.title = "mill credit assignment";
  r.seconds = clock.seconds();
  r.pass = good >= required_count(9, 12, N);
  r.measured = ratio_str(good, N) + " seeds with >= " + std::to_string(need) + "/" + std::to_string(agents) +
               " positive dQ_i/da_i (per seed: " + per_seed + "); mean greedy return " + fmt(final_eval) + ", " +
               fmt(r.seconds, 4) + " s";
  r.threshold = ">= " + std::to_string(required_count(9, 12, N)) + " seeds";
  return r;
}

// ---- 10: decomposition error scaling --------------------------------------------

inline CriterionResult check_fact2(std::uint64_t seed = 10) {
  algo::WallClock clock;
  const auto rep = analysis::fact2_scaling(seed);
  CriterionResult r;
  r.id = 10;
  r.title = "decomposition error scaling";
  r.seconds = clock.seconds();
  r.pass = !rep.ratios.empty();
  r.measured = "max error";
  for (std::size_t k = 0; k < rep.deltas.size(); ++k)
    r.measured += (k ? ", " : " ") + fmt(rep.max_errors[k]) + " at delta " + fmt(rep.deltas[k]);
  r.measured += "; reduction per halving";
  for (double q : rep.ratios) {
    r.measured += " " + fmt(q, 3);
    r.pass = r.pass && q >= 3.0;
  }
  r.threshold = ">= 3x per halving";
  return r;
}

// ---- 11: determinism ------------------------------------------------------------

inline const std::vector<std::string>& determinism_configs() {
  static const std::vector<std::string> cfgs{
      R"({"algorithm": ["stochastic_dop", "coma", "maddpg"], "environment": {"name": "matrix_game"},
          "hyperparameters": {"critic_hidden": [16, 16], "actor_hidden": [16], "epsilon_anneal_steps": 600},
          "seeds": [3, 4], "total_steps": 600, "metric_period": 200, "variance_samples": 30})",
      R"({"algorithm": ["offpolicy_dop", "common_tb_dop", "onpolicy_dop"], "environment": {"name": "tabular",
          "params": {"n_states": 3, "episode_limit": 8}}, "hyperparameters": {"critic_hidden": [16],
          "actor_hidden": [16], "expectation_samples": 20}, "seeds": [5], "total_steps": 800, "metric_period": 200})",
      R"({"algorithm": ["deterministic_dop", "maddpg"], "environment": {"name": "mill"},
          "hyperparameters": {"batch": 32, "warmup_steps": 200, "critic_hidden": [16, 16], "actor_hidden": [16]},
          "seeds": [6], "total_steps": 800, "metric_period": 200})"};
  return cfgs;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CriterionResult check_determinism(const AcceptanceOptions& opt) {
  algo::WallClock clock;
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / ("dop_determinism_" + std::to_string(::getpid()));
  long files = 0, identical = 0;
  std::string first_diff;
  for (std::size_t c = 0; c < determinism_configs().size(); ++c) {
    const RunConfig cfg = parse_config(determinism_configs()[c], "determinism config " + std::to_string(c));
    RunOptions a, b;
    a.out_dir = (root / ("a" + std::to_string(c))).string();
    b.out_dir = (root / ("b" + std::to_string(c))).string();
    a.seed_offset = b.seed_offset = opt.seed_offset;
    b.parallel = 2;  // thread scheduling must not matter
    const auto ra = run_config(cfg, a);
    run_config(cfg, b);
    std::vector<std::string> names{"manifest.json"};
    for (const auto& cell : ra.cells) names.push_back(cell.csv);
    for (const auto& n : names) {
      ++files;
      const std::string x = read_file(fs::path(*a.out_dir) / n), y = read_file(fs::path(*b.out_dir) / n);
      if (x == y && !x.empty())
        ++identical;
      else if (first_diff.empty())
        first_diff = n;
    }
  }
  fs::remove_all(root);
  CriterionResult r;
  r.id = 11;
  r.title = "determinism";
  r.seconds = clock.seconds();
  r.pass = files > 0 && identical == files;
  r.measured = ratio_str(identical, files) + " output files bit-identical across reruns (serial vs 2 threads)";
  r.threshold = "all identical";
  if (!first_diff.empty()) r.note = "first differing file: " + first_diff;
  return r;
}

// ---- suites ---------------------------------------------------------------------

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"oracles", "matrix_game", "aggregation", "mill", "improvement"};
  return names;
}

inline std::vector<int> suite_criteria(const std::string& suite) {
  static const std::map<std::string, std::vector<int>> m{{"oracles", {1, 2, 6, 7, 10, 11}},
                                                         {"improvement", {3, 4}},
                                                         {"matrix_game", {5}},
                                                         {"aggregation", {8}},
                                                         {"mill", {9}}};
  auto it = m.find(suite);
  if (it == m.end()) throw ConfigError("unknown suite '" + suite + "'");
  return it->second;
}

inline CriterionResult run_criterion(int id, const AcceptanceOptions& opt) {
  switch (id) {
    case 1: return check_expectation_decomposition();
    case 2: return check_read_complexity();
    case 3: return check_fact1();
    case 4: return check_prop1();
    case 5: return check_matrix_game(opt);
    case 6: return check_tree_backup();
    case 7: return check_gradients();
    case 8: return check_aggregation(opt);
    case 9: return check_mill(opt);
    case 10: return check_fact2();
    case 11: return check_determinism(opt);
  }
  throw ConfigError("unknown criterion " + std::to_string(id));
}

inline std::string format_result(const CriterionResult& r) {
  std::string s = std::string(r.pass ? "PASS" : "FAIL") + "  [" + std::to_string(r.id) + "] " + r.title + ": " +
                  r.measured + "  (threshold: " + r.threshold + ")";
  if (!r.note.empty()) s += "  note: " + r.note;
  return s;
}

// Runs the criteria of a suite, printing each line as soon as it is known.
inline std::vector<CriterionResult> run_suite(const std::string& suite, const AcceptanceOptions& opt,
                                              std::ostream* log = nullptr) {
  std::vector<CriterionResult> out;
  for (int id : suite_criteria(suite)) {
    CriterionResult r;
    try {
      r = run_criterion(id, opt);
    } catch (const std::exception& e) {
      r.id = id;
      r.title = "criterion " + std::to_string(id);
      r.pass = false;
      r.measured = std::string("error: ") + e.what();
      r.threshold = "runs to completion";
    }
    if (log) *log << format_result(r) << std::endl;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dop::harness
