#include "racebench/sac.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "racebench/errors.hpp"

namespace racebench {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
// Largest double below 1; keeps squashed actions strictly inside the box.
const double kMaxAbsAction = std::nextafter(1.0, 0.0);

// log(1 - tanh(u)^2) without cancellation for large |u|.
double log1m_tanh2(double u) {
  const double a = std::abs(u);
  return 2.0 * (std::log(2.0) - a - std::log1p(std::exp(-2.0 * a)));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, std::mt19937_64& rng) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw UsageError("Mlp needs at least an input and an output size");
  for (int s : sizes_) {
    if (s < 1) throw UsageError("Mlp layer sizes must be positive");
  }
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
  }
  params_.resize(total);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const Eigen::Index count = static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
    for (Eigen::Index i = 0; i < count; ++i) params_[offsets_[l] + i] = dist(rng);
  }
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(std::size_t layer) const {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t layer) const {
  return {params_.data() + offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer + 1]) * sizes_[layer],
          sizes_[layer + 1]};
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Tape* tape) const {
  if (sizes_.empty()) throw UsageError("Mlp is empty");
  if (input.rows() != input_dim()) {
    throw UsageError("Mlp input has " + std::to_string(input.rows()) + " rows, expected " +
                     std::to_string(input_dim()));
  }
  const std::size_t layers = sizes_.size() - 1;
  if (tape) {
    tape->acts.clear();
    tape->acts.push_back(input);
  }
  Eigen::MatrixXd a = input;
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    if (l + 1 < layers) z = z.array().tanh().matrix();
    a = std::move(z);
    if (tape) tape->acts.push_back(a);
  }
  return a;
}

Eigen::MatrixXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& upstream, Eigen::VectorXd& grad) const {
  const std::size_t layers = sizes_.size() - 1;
  if (tape.acts.size() != layers + 1) throw UsageError("Mlp tape does not match the network");
  if (upstream.rows() != output_dim() || upstream.cols() != tape.acts.back().cols()) {
    throw UsageError("Mlp upstream gradient has the wrong shape");
  }
  if (grad.size() == 0) grad = Eigen::VectorXd::Zero(num_params());
  if (grad.size() != num_params()) throw UsageError("Mlp gradient vector has the wrong size");

  Eigen::MatrixXd g = upstream;
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) g = g.cwiseProduct((1.0 - tape.acts[l + 1].array().square()).matrix());
    const int out = sizes_[l + 1];
    const int in = sizes_[l];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offsets_[l], out, in);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets_[l] + static_cast<Eigen::Index>(out) * in, out);
    gw.noalias() += g * tape.acts[l].transpose();
    gb += g.rowwise().sum();
    g = weight(l).transpose() * g;
  }
  return g;
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (grad.size() != params.size()) throw UsageError("Adam gradient size mismatch");
  if (m.size() != params.size()) {
    m = Eigen::VectorXd::Zero(params.size());
    v = Eigen::VectorXd::Zero(params.size());
    t = 0;
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

double squashed_gaussian_log_prob(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std,
                                  const Eigen::VectorXd& action) {
  if (mean.size() != log_std.size() || mean.size() != action.size()) {
    throw UsageError("squashed Gaussian arguments differ in size");
  }
  double lp = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double a = action[i];
    if (!(std::abs(a) < 1.0)) return -std::numeric_limits<double>::infinity();
    const double ls = std::clamp(log_std[i], kLogStdMin, kLogStdMax);
    const double u = std::atanh(a);
    const double xi = (u - mean[i]) / std::exp(ls);
    lp += -0.5 * xi * xi - ls - kHalfLog2Pi - std::log1p(-a * a);
  }
  return lp;
}

ActionSample sample_action(const Mlp& actor, const Eigen::VectorXd& obs, std::mt19937_64& rng, bool deterministic) {
  const Eigen::VectorXd out = actor.forward(obs);
  if (out.size() % 2 != 0) throw UsageError("actor output must hold a mean and a log-std per action");
  const Eigen::Index d = out.size() / 2;
  std::normal_distribution<double> normal;
  ActionSample s;
  s.action.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double ls = std::clamp(out[d + i], kLogStdMin, kLogStdMax);
    const double xi = deterministic ? 0.0 : normal(rng);
    const double u = out[i] + std::exp(ls) * xi;
    s.action[i] = std::clamp(std::tanh(u), -kMaxAbsAction, kMaxAbsAction);
    s.log_prob += -0.5 * xi * xi - ls - kHalfLog2Pi - log1m_tanh2(u);
  }
  return s;
}

ActionSample sample_action(const Mlp& actor, const Eigen::VectorXd& obs, std::uint64_t seed, bool deterministic) {
  std::mt19937_64 rng(seed);
  return sample_action(actor, obs, rng, deterministic);
}

void SacConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("sac.gamma must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("sac.batch_size must be positive");
  if (train_freq < 1) throw ConfigError("sac.train_freq must be positive");
  if (gradient_steps < 1) throw ConfigError("sac.gradient_steps must be positive");
  if (episode_len < 1) throw ConfigError("sac.episode_len must be positive");
  if (buffer_capacity < batch_size) throw ConfigError("sac.buffer_capacity must hold at least one batch");
  if (!(lr > 0.0)) throw ConfigError("sac.lr must be positive");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("sac.tau must be in (0, 1]");
  if (warmup_steps < 0) throw ConfigError("sac.warmup_steps must be >= 0");
  if (hidden.empty()) throw ConfigError("sac.hidden needs at least one layer");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("sac.hidden sizes must be positive");
  }
  if (auto_alpha ? !(init_alpha > 0.0) : !(init_alpha >= 0.0)) {
    throw ConfigError("sac.init_alpha must be positive (or zero with a fixed temperature)");
  }
  if (checkpoint_interval < 0) throw ConfigError("sac.checkpoint_interval must be >= 0");
}

ReplayBuffer::ReplayBuffer(long capacity, int obs_dim, int act_dim)
    : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim) {
  if (capacity < 1) throw UsageError("replay buffer capacity must be positive");
  if (obs_dim < 1 || act_dim < 1) throw UsageError("replay buffer dimensions must be positive");
}

void ReplayBuffer::reserve_slot(long slot) {
  const long cols = obs_.cols();
  if (slot < cols) return;
  const long grown = std::min(capacity_, std::max({slot + 1, 2 * cols, 1024L}));
  obs_.conservativeResize(obs_dim_, grown);
  next_obs_.conservativeResize(obs_dim_, grown);
  act_.conservativeResize(act_dim_, grown);
  rew_.conservativeResize(grown);
  done_.conservativeResize(grown);
}

void ReplayBuffer::add(const Transition& t) {
  if (t.obs.size() != obs_dim_ || t.next_obs.size() != obs_dim_ || t.action.size() != act_dim_) {
    throw UsageError("transition dimensions do not match the replay buffer");
  }
  if (!std::isfinite(t.reward)) throw UsageError("transition reward is not finite");
  if ((t.action.array().abs() > 1.0).any()) throw UsageError("transition action outside [-1, 1]");
  reserve_slot(next_);
  obs_.col(next_) = t.obs;
  next_obs_.col(next_) = t.next_obs;
  act_.col(next_) = t.action;
  rew_[next_] = t.reward;
  done_[next_] = t.done ? 1.0 : 0.0;
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

Batch ReplayBuffer::sample(int batch_size, std::mt19937_64& rng) const {
  if (batch_size < 1 || batch_size > size_) {
    throw UsageError("cannot sample " + std::to_string(batch_size) + " transitions from a buffer holding " +
                     std::to_string(size_));
  }
  std::uniform_int_distribution<long> pick(0, size_ - 1);
  Batch b;
  b.obs.resize(obs_dim_, batch_size);
  b.next_obs.resize(obs_dim_, batch_size);
  b.action.resize(act_dim_, batch_size);
  b.reward.resize(batch_size);
  b.done.resize(batch_size);
  for (int j = 0; j < batch_size; ++j) {
    const long i = pick(rng);
    b.obs.col(j) = obs_.col(i);
    b.next_obs.col(j) = next_obs_.col(i);
    b.action.col(j) = act_.col(i);
    b.reward[j] = rew_[i];
    b.done[j] = done_[i];
  }
  return b;
}

Transition ReplayBuffer::at(long index) const {
  if (index < 0 || index >= size_) throw UsageError("replay buffer index out of range");
  return {obs_.col(index), act_.col(index), rew_[index], next_obs_.col(index), done_[index] != 0.0};
}

SacAgent::SacAgent(int obs_dim, int act_dim, SacConfig config, std::uint64_t seed)
    : obs_dim_(obs_dim), act_dim_(act_dim), config_(std::move(config)), rng_(seed) {
  config_.validate();
  if (obs_dim < 1 || act_dim < 1) throw UsageError("agent dimensions must be positive");
  std::vector<int> actor_sizes{obs_dim};
  std::vector<int> critic_sizes{obs_dim + act_dim};
  for (int h : config_.hidden) {
    actor_sizes.push_back(h);
    critic_sizes.push_back(h);
  }
  actor_sizes.push_back(2 * act_dim);
  critic_sizes.push_back(1);
  actor_ = Mlp(actor_sizes, rng_);
  q1_ = Mlp(critic_sizes, rng_);
  q2_ = Mlp(critic_sizes, rng_);
  q1_target_ = q1_;
  q2_target_ = q2_;
  for (Adam* opt : {&actor_opt_, &q1_opt_, &q2_opt_, &alpha_opt_}) opt->lr = config_.lr;
  log_alpha_ = Eigen::VectorXd::Constant(1, std::log(config_.init_alpha));
  entropy_target_ = config_.entropy_target.value_or(-static_cast<double>(act_dim));
}

double SacAgent::alpha() const { return std::exp(log_alpha_[0]); }

ActionSample SacAgent::act(const Eigen::VectorXd& obs, bool deterministic) {
  return sample_action(actor_, obs, rng_, deterministic);
}

Eigen::MatrixXd SacAgent::stack(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& action) {
  Eigen::MatrixXd x(obs.rows() + action.rows(), obs.cols());
  x << obs, action;
  return x;
}

SacAgent::PolicyPass SacAgent::policy_pass(const Eigen::MatrixXd& obs, bool keep_tape) {
  PolicyPass p;
  const Eigen::MatrixXd out = actor_.forward(obs, keep_tape ? &p.tape : nullptr);
  const Eigen::Index d = act_dim_;
  const Eigen::Index B = obs.cols();
  p.mean = out.topRows(d);
  const Eigen::MatrixXd raw = out.bottomRows(d);
  p.clamped = (raw.array() < kLogStdMin) || (raw.array() > kLogStdMax);
  p.log_std = raw.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  p.noise.resize(d, B);
  std::normal_distribution<double> normal;
  for (Eigen::Index j = 0; j < B; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) p.noise(i, j) = normal(rng_);
  }
  p.u = p.mean + (p.log_std.array().exp() * p.noise.array()).matrix();
  p.action = p.u.array().tanh().cwiseMax(-kMaxAbsAction).cwiseMin(kMaxAbsAction).matrix();
  p.log_prob.resize(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    double lp = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      lp += -0.5 * p.noise(i, j) * p.noise(i, j) - p.log_std(i, j) - kHalfLog2Pi - log1m_tanh2(p.u(i, j));
    }
    p.log_prob[j] = lp;
  }
  return p;
}

Eigen::VectorXd SacAgent::critic_target(const Batch& batch) {
  const PolicyPass next = policy_pass(batch.next_obs, false);
  const Eigen::MatrixXd x = stack(batch.next_obs, next.action);
  const Eigen::VectorXd q1 = q1_target_.forward(x).transpose();
  const Eigen::VectorXd q2 = q2_target_.forward(x).transpose();
  const Eigen::VectorXd soft = q1.cwiseMin(q2) - alpha() * next.log_prob;
  const Eigen::VectorXd keep = (1.0 - batch.done.array()).matrix();
  return batch.reward + config_.gamma * keep.cwiseProduct(soft);
}

double SacAgent::update_critics(const Batch& batch) {
  const Eigen::VectorXd y = critic_target(batch);
  const Eigen::MatrixXd x = stack(batch.obs, batch.action);
  const double B = batch.size();
  double loss = 0.0;
  for (auto [net, opt] : {std::pair{&q1_, &q1_opt_}, std::pair{&q2_, &q2_opt_}}) {
    Mlp::Tape tape;
    const Eigen::RowVectorXd q = net->forward(x, &tape);
    const Eigen::RowVectorXd diff = q - y.transpose();
    loss += 0.5 * diff.squaredNorm() / B;
    Eigen::VectorXd grad;
    net->backward(tape, diff / B, grad);
    opt->step(net->params(), grad);
  }
  return loss;
}

double SacAgent::update_actor(const Batch& batch) {
  PolicyPass p = policy_pass(batch.obs, true);
  const Eigen::MatrixXd x = stack(batch.obs, p.action);
  const double B = batch.size();
  const double a = alpha();
  Mlp::Tape t1, t2;
  const Eigen::RowVectorXd q1 = q1_.forward(x, &t1);
  const Eigen::RowVectorXd q2 = q2_.forward(x, &t2);
  Eigen::RowVectorXd up1 = Eigen::RowVectorXd::Zero(q1.size());
  Eigen::RowVectorXd up2 = Eigen::RowVectorXd::Zero(q1.size());
  double loss = 0.0;
  for (Eigen::Index j = 0; j < q1.size(); ++j) {
    const bool first = q1[j] <= q2[j];
    loss += a * p.log_prob[j] - (first ? q1[j] : q2[j]);
    (first ? up1 : up2)[j] = -1.0 / B;
  }
  loss /= B;
  Eigen::VectorXd scratch1, scratch2;
  const Eigen::MatrixXd gx = q1_.backward(t1, up1, scratch1) + q2_.backward(t2, up2, scratch2);
  const Eigen::ArrayXXd d_action = gx.bottomRows(act_dim_).array();

  // Reparameterized path: u = mean + exp(log_std) * noise, action = tanh(u).
  const Eigen::ArrayXXd act = p.u.array().tanh();
  const Eigen::ArrayXXd d_u = d_action * (1.0 - act.square()) + (a / B) * 2.0 * act;
  Eigen::ArrayXXd d_logstd = -a / B + d_u * p.log_std.array().exp() * p.noise.array();
  d_logstd = p.clamped.select(0.0, d_logstd);
  Eigen::MatrixXd upstream(2 * act_dim_, p.u.cols());
  upstream << d_u.matrix(), d_logstd.matrix();
  Eigen::VectorXd grad;
  actor_.backward(p.tape, upstream, grad);
  actor_opt_.step(actor_.params(), grad);
  return loss;
}

void SacAgent::update_targets() {
  const double tau = config_.tau;
  q1_target_.params() = (1.0 - tau) * q1_target_.params() + tau * q1_.params();
  q2_target_.params() = (1.0 - tau) * q2_target_.params() + tau * q2_.params();
}

void SacAgent::check_finite(const SacLosses& losses, const Batch& batch) const {
  const bool ok = std::isfinite(losses.critic) && std::isfinite(losses.actor) && std::isfinite(losses.alpha) &&
                  actor_.params().allFinite() && q1_.params().allFinite() && q2_.params().allFinite();
  if (ok) return;
  std::ostringstream msg;
  msg << "non-finite SAC update: critic_loss=" << losses.critic << " actor_loss=" << losses.actor
      << " alpha=" << losses.alpha << " batch_reward_range=[" << batch.reward.minCoeff() << ", "
      << batch.reward.maxCoeff() << "] max_abs_obs=" << batch.obs.cwiseAbs().maxCoeff()
      << " actor_params_finite=" << actor_.params().allFinite();
  throw TrainingFault(msg.str());
}

SacLosses SacAgent::update(const Batch& batch) {
  if (batch.obs.rows() != obs_dim_ || batch.action.rows() != act_dim_) {
    throw UsageError("batch dimensions do not match the agent");
  }
  SacLosses losses;
  if (config_.auto_alpha) {
    const PolicyPass p = policy_pass(batch.obs, false);
    const double mean_term = (p.log_prob.array() + entropy_target_).mean();
    losses.alpha_loss = -log_alpha_[0] * mean_term;
    alpha_opt_.step(log_alpha_, Eigen::VectorXd::Constant(1, -mean_term));
  }
  losses.critic = update_critics(batch);
  losses.actor = update_actor(batch);
  update_targets();
  losses.alpha = alpha();
  check_finite(losses, batch);
  return losses;
}

void SacAgent::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << std::setprecision(17);
  out << "racebench-sac 1\n";
  out << "dims " << obs_dim_ << ' ' << act_dim_ << '\n';
  out << "log_alpha " << log_alpha_[0] << '\n';
  auto net = [&](const char* name, const Mlp& m) {
    out << "net " << name << ' ' << m.sizes().size();
    for (int s : m.sizes()) out << ' ' << s;
    out << '\n';
    for (Eigen::Index i = 0; i < m.num_params(); ++i) out << m.params()[i] << '\n';
  };
  net("actor", actor_);
  net("q1", q1_);
  net("q2", q2_);
  net("q1_target", q1_target_);
  net("q2_target", q2_target_);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

SacAgent SacAgent::load(const std::filesystem::path& path, SacConfig config) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  auto fail = [&](const std::string& what) { throw ParseError("checkpoint " + path.string() + ": " + what); };
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "racebench-sac" || version != 1) fail("unknown header");
  int obs_dim = 0, act_dim = 0;
  if (!(in >> tag >> obs_dim >> act_dim) || tag != "dims") fail("missing dims");
  double log_alpha = 0.0;
  if (!(in >> tag >> log_alpha) || tag != "log_alpha") fail("missing log_alpha");

  std::vector<std::pair<std::string, Mlp>> nets;
  for (int k = 0; k < 5; ++k) {
    std::string name;
    std::size_t count = 0;
    if (!(in >> tag >> name >> count) || tag != "net" || count < 2) fail("malformed network header");
    std::vector<int> sizes(count);
    for (auto& s : sizes) {
      if (!(in >> s) || s < 1) fail("bad layer size");
    }
    std::mt19937_64 dummy(0);
    Mlp m(sizes, dummy);
    for (Eigen::Index i = 0; i < m.num_params(); ++i) {
      if (!(in >> m.params()[i])) fail("truncated parameters for " + name);
    }
    nets.emplace_back(name, std::move(m));
  }
  const std::vector<int>& actor_sizes = nets[0].second.sizes();
  if (nets[0].first != "actor" || actor_sizes.front() != obs_dim || actor_sizes.back() != 2 * act_dim) {
    fail("actor shape does not match dims");
  }
  config.hidden.assign(actor_sizes.begin() + 1, actor_sizes.end() - 1);
  SacAgent agent(obs_dim, act_dim, config, 0);
  for (auto& [name, m] : nets) {
    Mlp* dst = name == "actor" ? &agent.actor_
               : name == "q1" ? &agent.q1_
               : name == "q2" ? &agent.q2_
               : name == "q1_target" ? &agent.q1_target_
               : name == "q2_target" ? &agent.q2_target_
                                     : nullptr;
    if (!dst) fail("unknown network " + name);
    if (dst->sizes() != m.sizes()) fail("network " + name + " has an unexpected shape");
    *dst = std::move(m);
  }
  agent.log_alpha_[0] = log_alpha;
  return agent;
}

void write_train_log(const std::vector<TrainLogRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,episode,return,lap_complete,actor_loss,critic_loss,alpha\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.step << ',' << r.episode << ',' << r.ret << ',' << (r.lap_complete ? 1 : 0) << ',' << r.actor_loss
        << ',' << r.critic_loss << ',' << r.alpha << '\n';
  }
}

TrainResult train(RlEnvironment& env, const SacConfig& config, long total_steps, std::uint64_t seed,
                  const TrainOptions& options) {
  config.validate();
  if (total_steps < 0) throw UsageError("total_steps must be >= 0");
  TrainResult result{SacAgent(env.obs_dim(), env.act_dim(), config, derive_seed(seed, 0)), {}};
  SacAgent& agent = result.agent;
  ReplayBuffer buffer(std::min(config.buffer_capacity, std::max(total_steps, 1L)), env.obs_dim(), env.act_dim());
  std::mt19937_64 episode_rng(derive_seed(seed, 1));
  std::mt19937_64 explore_rng(derive_seed(seed, 2));
  std::mt19937_64 batch_rng(derive_seed(seed, 3));
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);

  auto checkpoint = [&] {
    if (options.checkpoint) agent.save(*options.checkpoint);
  };

  Eigen::VectorXd obs;
  if (total_steps > 0) obs = env.reset(episode_rng());
  double ret = 0.0;
  bool lap = false;
  int episode = 0;
  int episode_steps = 0;
  SacLosses last;
  last.alpha = agent.alpha();
  for (long step = 1; step <= total_steps; ++step) {
    Eigen::VectorXd action(env.act_dim());
    if (step <= config.warmup_steps) {
      for (Eigen::Index i = 0; i < action.size(); ++i) action[i] = uniform(explore_rng);
    } else {
      action = agent.act(obs).action;
    }
    RlStep s;
    try {
      s = env.step(action);
    } catch (const std::exception& e) {
      checkpoint();
      throw TrainingFault("environment fault at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(s.reward) || !s.obs.allFinite()) {
      checkpoint();
      throw TrainingFault("environment returned a non-finite reward or observation at step " + std::to_string(step));
    }
    ++episode_steps;
    ret += s.reward;
    lap = lap || s.lap_complete;
    buffer.add({obs, action, s.reward, s.obs, s.terminal});
    obs = s.obs;

    if (step > config.warmup_steps && step % config.train_freq == 0 && buffer.size() >= config.batch_size) {
      for (int g = 0; g < config.gradient_steps; ++g) {
        try {
          last = agent.update(buffer.sample(config.batch_size, batch_rng));
        } catch (const TrainingFault&) {
          checkpoint();
          throw;
        }
      }
    }

    if (s.terminal || s.truncated || episode_steps >= config.episode_len) {
      result.log.push_back({step, episode, ret, lap, last.actor, last.critic, last.alpha});
      ++episode;
      ret = 0.0;
      lap = false;
      episode_steps = 0;
      if (step < total_steps) obs = env.reset(episode_rng());
    }
    if (config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0) checkpoint();
  }
  checkpoint();
  if (options.log) write_train_log(result.log, *options.log);
  return result;
}

double evaluate_return(RlEnvironment& env, SacAgent* agent, int episodes, std::uint64_t seed, int max_steps) {
  if (episodes < 1) throw UsageError("evaluation needs at least one episode");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Eigen::VectorXd obs = env.reset(rng());
    for (int k = 0; k < max_steps; ++k) {
      Eigen::VectorXd action(env.act_dim());
      if (agent) {
        action = agent->act(obs, true).action;
      } else {
        for (Eigen::Index i = 0; i < action.size(); ++i) action[i] = uniform(rng);
      }
      const RlStep s = env.step(action);
      total += s.reward;
      obs = s.obs;
      if (s.terminal || s.truncated) break;
    }
  }
  return total / episodes;
}

}  // namespace racebench
