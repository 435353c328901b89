#include "rlcf/rlcf.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "rlcf/checkpoint.hpp"
#include "rlcf/error.hpp"

namespace rlcf {

namespace {

using Var = ad::Tape::Var;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorKind::kConfig, "config key '" + key + "': '" + v + "' is not a number");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw Error(ErrorKind::kConfig, "config key '" + key + "': '" + v + "' is not a nonnegative integer");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(ErrorKind::kConfig, "config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<Matrix> value_tensors(const ValueHead& head) {
  Matrix w = head.weight;  // H x 1
  Matrix b(1, 1);
  b(0, 0) = head.bias;
  return {w, b};
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void RlcfConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, "invalid RLCF config: " + m); };
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail("beta must be >= 0");
  if (K < 1) fail("K must be >= 1 (batch size B = K + 1 >= 2)");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) fail("clip_epsilon must lie in (0, 1)");
  if (minibatch_size < 1) fail("minibatch_size must be >= 1");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must lie in [0, 1]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
  if (!(learning_rate >= 0.0) || !(value_learning_rate >= 0.0)) fail("learning rates must be >= 0");
  if (max_response_length < 1) fail("max_response_length must be >= 1");
  if (!(temperature > 0.0)) fail("temperature must be > 0");
  if (groups_per_step < 1) fail("groups_per_step must be >= 1");
}

bool set_rlcf_key(RlcfConfig& c, const std::string& key, const std::string& v) {
  if (key == "beta") c.beta = parse_double(key, v);
  else if (key == "K") c.K = parse_uint(key, v);
  else if (key == "clip_epsilon") c.clip_epsilon = parse_double(key, v);
  else if (key == "ppo_epochs") c.ppo_epochs = parse_uint(key, v);
  else if (key == "minibatch_size") c.minibatch_size = parse_uint(key, v);
  else if (key == "value_loss_weight") c.value_loss_weight = parse_double(key, v);
  else if (key == "gae_lambda") c.gae_lambda = parse_double(key, v);
  else if (key == "gamma") c.gamma = parse_double(key, v);
  else if (key == "learning_rate") c.learning_rate = parse_double(key, v);
  else if (key == "value_learning_rate") c.value_learning_rate = parse_double(key, v);
  else if (key == "clip_norm") c.clip_norm = parse_double(key, v);
  else if (key == "normalize_advantages") c.normalize_advantages = parse_bool(key, v);
  else if (key == "max_response_length") c.max_response_length = parse_uint(key, v);
  else if (key == "temperature") c.temperature = parse_double(key, v);
  else if (key == "seed") c.seed = parse_uint(key, v);
  else if (key == "total_steps") c.total_steps = parse_uint(key, v);
  else if (key == "groups_per_step") c.groups_per_step = parse_uint(key, v);
  else if (key == "checkpoint_interval") c.checkpoint_interval = parse_uint(key, v);
  else return false;
  return true;
}

RlcfConfig parse_rlcf_config(const std::string& text) {
  RlcfConfig config;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kConfig, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!set_rlcf_key(config, key, trim(line.substr(eq + 1)))) {
      throw Error(ErrorKind::kConfig, "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  config.validate();
  return config;
}

RlcfConfig load_rlcf_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open RLCF config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_rlcf_config(ss.str());
}

std::string RlcfConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "beta = " << beta << "\nK = " << K << "\nclip_epsilon = " << clip_epsilon << "\nppo_epochs = " << ppo_epochs
      << "\nminibatch_size = " << minibatch_size << "\nvalue_loss_weight = " << value_loss_weight
      << "\ngae_lambda = " << gae_lambda << "\ngamma = " << gamma << "\nlearning_rate = " << learning_rate
      << "\nvalue_learning_rate = " << value_learning_rate << "\nclip_norm = " << clip_norm
      << "\nnormalize_advantages = " << (normalize_advantages ? "true" : "false")
      << "\nmax_response_length = " << max_response_length << "\ntemperature = " << temperature
      << "\nseed = " << seed << "\ntotal_steps = " << total_steps << "\ngroups_per_step = " << groups_per_step
      << "\ncheckpoint_interval = " << checkpoint_interval << "\n";
  return out.str();
}

double batched_mrr(std::size_t rank) {
  if (rank < 1) throw Error("rank must be >= 1");
  return 1.0 / static_cast<double>(rank);
}

double full_reward(double bmrr, double logp_policy, double logp_ref, double beta) {
  if (!std::isfinite(bmrr) || !std::isfinite(logp_policy) || !std::isfinite(logp_ref) || !std::isfinite(beta)) {
    throw Error("full_reward: non-finite input");
  }
  return bmrr - beta * (logp_policy - logp_ref);
}

ValueHead ValueHead::zeros(std::size_t width) {
  return ValueHead{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(width)), 0.0};
}

std::size_t RolloutBatch::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.response.tokens.size();
  return n;
}

SequenceScores score_sequence(const PolicyParams& policy, const ValueHead& value_head,
                              std::span<const TokenId> prompt, std::span<const TokenId> response) {
  SequenceScores out;
  if (response.empty()) return out;
  TokenSeq seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), response.begin(), response.end() - 1);
  ad::Tape tape;
  const std::size_t first = prompt.size() - 1;
  const ForwardGraph g = record_forward(tape, policy, nullptr, seq, first, response);
  const Matrix& lp = tape.value(g.logprobs);
  out.logprobs.assign(lp.data(), lp.data() + lp.size());
  const Matrix& hidden = tape.value(g.hidden);
  for (std::size_t t = 0; t < response.size(); ++t) {
    out.values.push_back(hidden.row(static_cast<Eigen::Index>(first + t)).dot(value_head.weight.transpose()) +
                         value_head.bias);
  }
  return out;
}

void compute_advantages(RolloutSequence& seq, double terminal_reward, double gamma, double lambda) {
  const std::size_t n = seq.values.size();
  seq.advantages.assign(n, 0.0);
  seq.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double reward = t + 1 == n ? terminal_reward : 0.0;
    const double next_value = t + 1 == n ? 0.0 : seq.values[t + 1];
    const double delta = reward + gamma * next_value - seq.values[t];
    next_adv = delta + gamma * lambda * next_adv;
    seq.advantages[t] = next_adv;
    seq.returns[t] = next_adv + seq.values[t];
  }
}

RolloutBatch rollout_group(const SimilarGroup& group, const PolicyParams& policy, const PolicyParams& reference,
                           const ValueHead& value_head, const RolloutContext& ctx, const RlcfConfig& config,
                           std::uint64_t stream_seed) {
  RolloutBatch batch;
  batch.group = group;
  const auto members = group.members();
  const std::size_t b = members.size();
  std::vector<const Document*> docs;
  std::vector<Embedding> doc_embeddings;
  for (const auto& id : members) {
    docs.push_back(&ctx.corpus.at(id));
    doc_embeddings.push_back(embed(*docs.back(), ctx.retriever));
  }
  const PromptBudget budget{ctx.context, config.max_response_length};
  for (std::size_t j = 0; j < b; ++j) {
    RolloutSequence seq;
    seq.doc_id = members[j];
    try {
      seq.prompt = assemble_prompt(ctx.prompt_template, *docs[j], ctx.tokenizer, budget);
      seq.response = generate(policy, seq.prompt, DecodeMode::sampled(config.temperature, mix_seed(stream_seed, j)),
                              config.max_response_length);
      SequenceScores scores = score_sequence(policy, value_head, seq.prompt, seq.response.tokens);
      seq.old_logprobs = std::move(scores.logprobs);
      seq.values = std::move(scores.values);
      seq.ref_logprobs = logprob(reference, seq.prompt, seq.response.tokens);
    } catch (const Error& e) {
      throw Error(e.kind(), "rollout for document '" + seq.doc_id + "': " + e.what());
    }
    const TokenSeq content = seq.response.content();
    // An empty response distinguishes nothing and ranks last.
    const std::size_t rank =
        content.empty() ? b : rank_in_batch(embed(content, ctx.retriever), doc_embeddings, j);
    const double logp_policy = std::accumulate(seq.old_logprobs.begin(), seq.old_logprobs.end(), 0.0);
    const double logp_ref = std::accumulate(seq.ref_logprobs.begin(), seq.ref_logprobs.end(), 0.0);
    seq.reward.doc_id = seq.doc_id;
    seq.reward.rank = rank;
    seq.reward.batched_mrr = batched_mrr(rank);
    seq.reward.kl_term = logp_policy - logp_ref;
    seq.reward.full_reward = full_reward(seq.reward.batched_mrr, logp_policy, logp_ref, config.beta);
    compute_advantages(seq, seq.reward.full_reward, config.gamma, config.gae_lambda);
    batch.sequences.push_back(std::move(seq));
  }
  return batch;
}

PpoStats ppo_step(PolicyParams& policy, ValueHead& value_head, std::span<const RolloutBatch> rollouts,
                  const RlcfConfig& config, PpoOptimizer& optimizer, std::uint64_t shuffle_seed) {
  if (rollouts.empty()) throw Error("ppo_step needs at least one rollout batch");
  std::vector<const RolloutSequence*> seqs;
  std::vector<std::size_t> batch_of;
  for (std::size_t bi = 0; bi < rollouts.size(); ++bi) {
    for (const auto& s : rollouts[bi].sequences) {
      seqs.push_back(&s);
      batch_of.push_back(bi);
    }
  }
  PpoStats stats;
  for (const auto* s : seqs) {
    stats.mean_reward += s->reward.full_reward;
    stats.mean_batched_mrr += s->reward.batched_mrr;
    stats.mean_kl += s->reward.kl_term;
  }
  const auto ns = static_cast<double>(seqs.size());
  stats.mean_reward /= ns;
  stats.mean_batched_mrr /= ns;
  stats.mean_kl /= ns;

  // Token advantages, optionally whitened over the whole step.
  std::vector<std::vector<double>> adv(seqs.size());
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    adv[i] = seqs[i]->advantages;
    for (const double a : adv[i]) {
      sum += a;
      sq += a * a;
      ++count;
    }
  }
  if (config.normalize_advantages && count > 1) {
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sq / static_cast<double>(count) - mean * mean);
    const double sd = std::sqrt(var);
    for (auto& a : adv) {
      for (double& x : a) x = sd > 1e-8 ? (x - mean) / sd : x - mean;
    }
  }

  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t passes = 0, evaluated = 0, clipped = 0;
  const double eps = config.clip_epsilon;
  for (std::size_t epoch = 0; epoch < config.ppo_epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(shuffle_seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.minibatch_size) {
      const std::size_t end = std::min(order.size(), start + config.minibatch_size);
      std::size_t tokens = 0;
      for (std::size_t k = start; k < end; ++k) tokens += seqs[order[k]]->response.tokens.size();
      if (tokens == 0) continue;
      const double inv_n = 1.0 / static_cast<double>(tokens);

      std::vector<Matrix> grads = policy.zeros_like();
      Eigen::VectorXd grad_w = Eigen::VectorXd::Zero(value_head.weight.size());
      double grad_b = 0.0;
      double surrogate = 0.0, vloss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const RolloutSequence& s = *seqs[idx];
        const auto& resp = s.response.tokens;
        if (resp.empty()) continue;
        TokenSeq in(s.prompt);
        in.insert(in.end(), resp.begin(), resp.end() - 1);
        ad::Tape tape;
        const std::size_t first = s.prompt.size() - 1;
        const ForwardGraph g = record_forward(tape, policy, &grads, in, first, resp);
        const Matrix& lp = tape.value(g.logprobs);
        const Matrix& hidden = tape.value(g.hidden);
        Matrix seed = Matrix::Zero(lp.rows(), 1);
        for (std::size_t t = 0; t < resp.size(); ++t) {
          const double new_lp = lp(static_cast<Eigen::Index>(t), 0);
          if (!std::isfinite(new_lp)) {
            throw Error(ErrorKind::kTrainingAbort,
                        "non-finite log-probability in rollout batch " + std::to_string(batch_of[idx]));
          }
          const double ratio = std::exp(new_lp - s.old_logprobs[t]);
          const double a = adv[idx][t];
          const double clipped_ratio = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
          surrogate -= std::min(ratio * a, clipped_ratio * a) * inv_n;
          if (ratio * a <= clipped_ratio * a) seed(static_cast<Eigen::Index>(t), 0) = -ratio * a * inv_n;
          if (std::abs(ratio - 1.0) > eps) ++clipped;
          ++evaluated;
          if (epoch == 0 && start == 0) {
            stats.initial_ratio_deviation = std::max(stats.initial_ratio_deviation, std::abs(ratio - 1.0));
          }
          const auto h = hidden.row(static_cast<Eigen::Index>(first + t));
          const double v = h.dot(value_head.weight.transpose()) + value_head.bias;
          const double err = v - s.returns[t];
          vloss += 0.5 * err * err * inv_n;
          const double dv = config.value_loss_weight * err * inv_n;
          grad_w += dv * h.transpose();
          grad_b += dv;
        }
        const std::pair<Var, Matrix> seeds{g.logprobs, std::move(seed)};
        tape.backward(std::span(&seeds, 1));
      }
      if (!std::isfinite(surrogate) || !std::isfinite(vloss)) {
        throw Error(ErrorKind::kTrainingAbort, "non-finite PPO loss in rollout batch " +
                                                   std::to_string(batch_of[order[start]]));
      }
      optimizer.policy.step(policy.tensors(), grads, config.learning_rate, config.clip_norm);
      std::vector<Matrix> vparams = value_tensors(value_head);
      std::vector<Matrix> vgrads{Matrix(grad_w), Matrix::Constant(1, 1, grad_b)};
      optimizer.value.step(vparams, vgrads, config.value_learning_rate, 0.0);
      value_head.weight = vparams[0].col(0);
      value_head.bias = vparams[1](0, 0);
      stats.surrogate_loss += surrogate;
      stats.value_loss += config.value_loss_weight * vloss;
      ++passes;
    }
  }
  if (passes > 0) {
    stats.surrogate_loss /= static_cast<double>(passes);
    stats.value_loss /= static_cast<double>(passes);
  }
  if (evaluated > 0) stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(evaluated);
  if (!policy.all_finite()) throw Error(ErrorKind::kTrainingAbort, "policy parameters became non-finite");
  return stats;
}

std::string to_jsonl(const TrainLogRow& row) {
  nlohmann::ordered_json j;
  j["step"] = row.step;
  j["mean_batched_mrr"] = row.mean_batched_mrr;
  j["mean_kl"] = row.mean_kl;
  j["surrogate_loss"] = row.surrogate_loss;
  j["value_loss"] = row.value_loss;
  j["clip_fraction"] = row.clip_fraction;
  j["wall_time"] = row.wall_time;
  return j.dump();
}

std::vector<TrainLogRow> load_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "cannot open training log " + path.string());
  std::vector<TrainLogRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    rows.push_back({j.at("step").get<std::size_t>(), j.at("mean_batched_mrr").get<double>(),
                    j.at("mean_kl").get<double>(), j.at("surrogate_loss").get<double>(),
                    j.at("value_loss").get<double>(), j.at("clip_fraction").get<double>(),
                    j.at("wall_time").get<double>()});
  }
  return rows;
}

void save_rlcf_state(const std::filesystem::path& dir, const RlcfState& state, const TokenizerSpec& tokenizer,
                     const std::vector<std::uint64_t>& seed_lineage) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> names{"value.weight", "value.bias"};
  std::vector<Matrix> tensors = value_tensors(state.value_head);
  auto add_moments = [&](const std::string& prefix, const Adam& adam) {
    for (std::size_t i = 0; i < adam.first_moment().size(); ++i) {
      names.push_back(prefix + ".m." + std::to_string(i));
      tensors.push_back(adam.first_moment()[i]);
      names.push_back(prefix + ".v." + std::to_string(i));
      tensors.push_back(adam.second_moment()[i]);
    }
  };
  add_moments("adam.policy", state.optimizer.policy);
  add_moments("adam.value", state.optimizer.value);
  save_tensor_archive(dir / "trainer_state.bin", names, tensors);
  nlohmann::ordered_json j;
  j["step"] = state.step;
  j["adam_policy_steps"] = state.optimizer.policy.steps();
  j["adam_value_steps"] = state.optimizer.value.steps();
  std::ofstream(dir / "trainer_state.json") << j.dump(2) << '\n';
  save_checkpoint(dir, state.policy, tokenizer, seed_lineage);
}

RlcfState load_rlcf_state(const std::filesystem::path& dir, const TokenizerSpec* tokenizer) {
  RlcfState state;
  state.policy = load_checkpoint(dir, tokenizer);
  std::ifstream in(dir / "trainer_state.json");
  if (!in) throw Error(ErrorKind::kMissingArtifact, "no trainer state in " + dir.string());
  const auto j = nlohmann::json::parse(in);
  state.step = j.at("step").get<std::size_t>();
  std::vector<std::string> names;
  std::vector<Matrix> tensors;
  load_tensor_archive(dir / "trainer_state.bin", names, tensors);
  if (tensors.size() < 2) throw Error("trainer state in " + dir.string() + " is incomplete");
  state.value_head.weight = tensors[0].col(0);
  state.value_head.bias = tensors[1](0, 0);
  for (std::size_t i = 2; i < names.size(); i += 2) {
    Adam& adam = names[i].rfind("adam.policy", 0) == 0 ? state.optimizer.policy : state.optimizer.value;
    adam.first_moment().push_back(tensors[i]);
    adam.second_moment().push_back(tensors[i + 1]);
  }
  state.optimizer.policy.set_steps(j.at("adam_policy_steps").get<std::int64_t>());
  state.optimizer.value.set_steps(j.at("adam_value_steps").get<std::int64_t>());
  return state;
}

RlcfResult train(const std::vector<SimilarGroup>& groups, const PolicyParams& reference_init,
                 const RolloutContext& ctx, const RlcfConfig& config, std::optional<RlcfState> resume,
                 const TrainHooks& hooks) {
  config.validate();
  if (groups.empty()) throw Error("RLCF training needs at least one group");
  const PolicyParams reference = reference_init;
  RlcfResult result;
  result.reference_hash_start = reference.hash();

  if (resume) {
    result.state = std::move(*resume);
  } else {
    result.state.policy = reference;
    result.state.policy.version = reference.version + "+rlcf";
    result.state.value_head = ValueHead::zeros(reference.descriptor().width);
  }
  RlcfState& state = result.state;
  const std::size_t n = groups.size();
  std::vector<std::size_t> perm;
  std::size_t perm_epoch = static_cast<std::size_t>(-1);
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t step = state.step; step < config.total_steps; ++step) {
    std::vector<RolloutBatch> rollouts;
    for (std::size_t i = 0; i < config.groups_per_step; ++i) {
      const std::size_t g = step * config.groups_per_step + i;
      if (g / n != perm_epoch) {
        perm_epoch = g / n;
        perm.resize(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 rng(mix_seed(config.seed, perm_epoch));
        std::shuffle(perm.begin(), perm.end(), rng);
      }
      rollouts.push_back(rollout_group(groups[perm[g % n]], state.policy, reference, state.value_head, ctx, config,
                                       mix_seed(mix_seed(config.seed, step), i)));
    }
    const PpoStats stats =
        ppo_step(state.policy, state.value_head, rollouts, config, state.optimizer, mix_seed(config.seed ^ 0x5eed, step));
    state.step = step + 1;

    TrainLogRow row;
    row.step = step;
    row.mean_batched_mrr = stats.mean_batched_mrr;
    row.mean_kl = stats.mean_kl;
    row.surrogate_loss = stats.surrogate_loss;
    row.value_loss = stats.value_loss;
    row.clip_fraction = stats.clip_fraction;
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
    if (config.checkpoint_interval > 0 && state.step % config.checkpoint_interval == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(state);
    }
  }
  result.reference_hash_end = reference.hash();
  return result;
}

double mean_kl_to_reference(const PolicyParams& policy, const PolicyParams& reference,
                            const std::vector<TokenSeq>& prompts, std::size_t max_len, double temperature,
                            std::uint64_t seed) {
  if (prompts.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& prompt = prompts[i];
    const Response r = generate(policy, prompt, DecodeMode::sampled(temperature, mix_seed(seed, i)), max_len);
    if (r.tokens.empty()) continue;
    TokenSeq seq(prompt);
    seq.insert(seq.end(), r.tokens.begin(), r.tokens.end() - 1);
    const Matrix p = position_log_distributions(policy, seq, prompt.size() - 1, r.tokens.size());
    const Matrix q = position_log_distributions(reference, seq, prompt.size() - 1, r.tokens.size());
    total += (p.array().exp() * (p.array() - q.array())).sum();
  }
  return total / static_cast<double>(prompts.size());
}

}  // namespace rlcf
