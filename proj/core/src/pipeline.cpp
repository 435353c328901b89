#include "rlcf/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "json.hpp"
#include "rlcf/checkpoint.hpp"
#include "rlcf/synth.hpp"
#include "rlcf/text.hpp"

namespace rlcf {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::kConfig, "key '" + key + "': expected a number, got '" + v + "'");
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (!v.empty() && std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); })) {
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
    }
  }
  throw Error(ErrorKind::kConfig, "key '" + key + "': expected a non-negative integer, got '" + v + "'");
}

std::string join_uints(const std::vector<std::uint64_t>& v) {
  std::string out;
  for (const auto x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

fs::path resolve(const fs::path& base, const std::string& v) {
  const fs::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

void log_line(const CommandOptions& o, const std::string& msg) {
  if (o.log != nullptr) *o.log << msg << std::endl;
}

std::string replace_seed(const std::string& s, std::uint64_t seed) {
  std::string out = s;
  const auto pos = out.find("{seed}");
  if (pos != std::string::npos) out.replace(pos, 6, std::to_string(seed));
  return out;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) seeds.push_back(to_uint("seeds", trim(item)));
  if (seeds.empty()) throw Error(ErrorKind::kConfig, "key 'seeds': empty seed list");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw Error(ErrorKind::kConfig, "key 'seeds': duplicate seed");
  return seeds;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys = {"corpus",        "sft_targets",       "gold",           "templates",
                                   "out",           "task",              "tokenizer",      "heldout_fraction",
                                   "retriever.seed", "retriever.dim",    "model.layers",   "model.width",
                                   "model.heads",   "model.context",     "pretrain.epochs", "pretrain.lr",
                                   "pretrain.batch_size", "sft.epochs",  "sft.lr",         "sft.batch_size",
                                   "aug.task",      "aug.batch_size",    "aug.lr",         "aug.epochs",
                                   "aug.dim",       "aug.eval_slots",    "seeds"};
  std::istringstream rl(RlcfConfig{}.to_text());
  std::string line;
  while (std::getline(rl, line)) keys.push_back("rlcf." + trim(line.substr(0, line.find('='))));
  return keys;
}

bool set_run_key(RunConfig& c, const std::string& key, const std::string& v, const fs::path& base) {
  if (key == "corpus") c.corpus = resolve(base, v);
  else if (key == "sft_targets") c.sft_targets = resolve(base, v);
  else if (key == "gold") c.gold = resolve(base, v);
  else if (key == "templates") c.templates = resolve(base, v);
  else if (key == "out") c.out = resolve(base, v);
  else if (key == "task") c.task = v;
  else if (key == "tokenizer") {
    try {
      c.tokenizer = parse_scheme(v);
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfig, "key 'tokenizer': " + std::string(e.what()));
    }
  } else if (key == "heldout_fraction") c.heldout_fraction = to_double(key, v);
  else if (key == "retriever.seed") c.retriever_seed = to_uint(key, v);
  else if (key == "retriever.dim") c.retriever_dim = to_uint(key, v);
  else if (key == "model.layers") c.model.layers = to_uint(key, v);
  else if (key == "model.width") c.model.width = to_uint(key, v);
  else if (key == "model.heads") c.model.heads = to_uint(key, v);
  else if (key == "model.context") c.model.context = to_uint(key, v);
  else if (key == "pretrain.epochs") c.pretrain_epochs = to_uint(key, v);
  else if (key == "pretrain.lr") c.pretrain_lr = to_double(key, v);
  else if (key == "pretrain.batch_size") c.pretrain_batch_size = to_uint(key, v);
  else if (key == "sft.epochs") c.sft_epochs = to_uint(key, v);
  else if (key == "sft.lr") c.sft_lr = to_double(key, v);
  else if (key == "sft.batch_size") c.sft_batch_size = to_uint(key, v);
  else if (key == "aug.task") c.aug_task = v;
  else if (key == "aug.batch_size") c.aug.batch_size = to_uint(key, v);
  else if (key == "aug.lr") c.aug.learning_rate = to_double(key, v);
  else if (key == "aug.epochs") c.aug.epochs = to_uint(key, v);
  else if (key == "aug.dim") c.aug.dim = to_uint(key, v);
  else if (key == "aug.eval_slots") {
    c.aug_eval_slots.clear();
    if (v != "all") {
      for (const auto s : parse_seed_list(v)) c.aug_eval_slots.push_back(static_cast<std::size_t>(s));
    }
  } else if (key == "seeds") c.seeds = parse_seed_list(v);
  else if (key.rfind("rlcf.", 0) == 0) {
    try {
      return set_rlcf_key(c.rlcf, key.substr(5), v);
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfig, e.what());
    }
  } else return false;
  return true;
}

RunConfig parse_run_config(const std::string& text, const fs::path& base) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kConfig, "config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!set_run_key(c, key, trim(line.substr(eq + 1)), base)) {
      throw Error(ErrorKind::kConfig, "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  c.rlcf.validate();
  c.aug.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::string env_name(const std::string& key) {
  std::string out = "RLCF_";
  for (const char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

void apply_env_overrides(RunConfig& config, const std::function<const char*(const char*)>& lookup) {
  for (const auto& key : run_config_keys()) {
    const std::string name = env_name(key);
    const char* v = lookup ? lookup(name.c_str()) : std::getenv(name.c_str());
    if (v != nullptr) set_run_key(config, key, v, fs::current_path());
  }
  config.rlcf.validate();
  config.aug.validate();
}

std::string RunConfig::canonical() const {
  std::ostringstream s;
  s << "corpus = " << corpus.string() << "\nsft_targets = " << sft_targets.string() << "\ngold = " << gold.string()
      << "\ntemplates = " << templates.string() << "\nout = " << out.string() << "\ntask = " << task
      << "\ntokenizer = " << scheme_name(tokenizer) << "\nheldout_fraction = " << fmt(heldout_fraction)
      << "\nretriever.seed = " << retriever_seed << "\nretriever.dim = " << retriever_dim
      << "\nmodel.layers = " << model.layers << "\nmodel.width = " << model.width << "\nmodel.heads = " << model.heads
      << "\nmodel.context = " << model.context << "\npretrain.epochs = " << pretrain_epochs
      << "\npretrain.lr = " << fmt(pretrain_lr) << "\npretrain.batch_size = " << pretrain_batch_size
      << "\nsft.epochs = " << sft_epochs << "\nsft.lr = " << fmt(sft_lr) << "\nsft.batch_size = " << sft_batch_size
      << "\naug.task = " << aug_task << "\naug.batch_size = " << aug.batch_size << "\naug.lr = " << fmt(aug.learning_rate)
      << "\naug.epochs = " << aug.epochs << "\naug.dim = " << aug.dim << "\naug.eval_slots = ";
  if (aug_eval_slots.empty()) {
    s << "all";
  } else {
    for (std::size_t i = 0; i < aug_eval_slots.size(); ++i) s << (i ? "," : "") << aug_eval_slots[i];
  }
  s << "\nseeds = " << join_uints(seeds) << "\n";
  std::istringstream rl(rlcf.to_text());
  std::string line;
  while (std::getline(rl, line)) s << "rlcf." << line << "\n";
  return s.str();
}

std::string RunConfig::hash() const { return hex64(fnv1a64(canonical())); }

void validate_paths(const RunConfig& c, Stage stage) {
  auto need = [](const char* key, const fs::path& p) {
    if (p.empty()) throw Error(ErrorKind::kConfig, "key '" + std::string(key) + "' is required");
    if (!fs::is_regular_file(p)) {
      throw Error(ErrorKind::kConfig, "key '" + std::string(key) + "': no such file " + p.string());
    }
  };
  if (c.out.empty()) throw Error(ErrorKind::kConfig, "key 'out' is required");
  if (fs::exists(c.out) && !fs::is_directory(c.out)) {
    throw Error(ErrorKind::kConfig, "key 'out': " + c.out.string() + " is not a directory");
  }
  if (stage == Stage::kReport) return;
  need("corpus", c.corpus);
  if (stage == Stage::kBuildGroups) return;
  need("templates", c.templates);
  if (stage == Stage::kTrain) need("sft_targets", c.sft_targets);
  if (stage == Stage::kCompareAug) need("gold", c.gold);
  if (!(c.heldout_fraction >= 0.0 && c.heldout_fraction < 1.0)) {
    throw Error(ErrorKind::kConfig, "key 'heldout_fraction' must be in [0, 1)");
  }
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".rlcf.lock") {
  fs::create_directories(dir);
  FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr) {
    throw Error(ErrorKind::kConfig, "output directory " + dir.string() + " is locked by another run (remove " +
                                        path_.string() + " if stale)");
  }
  std::fprintf(f, "%ld\n", static_cast<long>(getpid()));
  std::fclose(f);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

bool PreparedData::heldout(const std::string& id) const {
  const auto pos = corpus.position(id);
  if (!pos) throw Error("unknown document '" + id + "'");
  return *pos >= train_size;
}

Corpus PreparedData::train_corpus() const {
  return Corpus(std::vector<Document>(corpus.documents().begin(),
                                      corpus.documents().begin() + static_cast<std::ptrdiff_t>(train_size)));
}

Corpus PreparedData::heldout_corpus() const {
  return Corpus(std::vector<Document>(corpus.documents().begin() + static_cast<std::ptrdiff_t>(train_size),
                                      corpus.documents().end()));
}

PromptBudget PreparedData::budget(const RunConfig& config) const {
  return PromptBudget{config.model.context, config.rlcf.max_response_length};
}

const PromptTemplate& PreparedData::prompt_template(const std::string& task) const {
  const auto it = templates.find(task);
  if (it == templates.end()) throw Error(ErrorKind::kConfig, "template file has no task '" + task + "'");
  return it->second;
}

PreparedData prepare_data(const RunConfig& config) {
  PreparedData d;
  const auto records = read_corpus_records(config.corpus);
  std::vector<std::string> texts;
  for (const auto& r : records) texts.push_back(r.text);
  if (!config.templates.empty() && fs::exists(config.templates)) {
    d.templates = load_templates(config.templates);
    for (const auto& [task, t] : d.templates) {
      texts.push_back(t.instruction);
      for (const auto& ex : t.examples) {
        texts.push_back(ex.document);
        texts.push_back(ex.response);
      }
    }
  }
  if (!config.sft_targets.empty() && fs::exists(config.sft_targets)) {
    std::ifstream in(config.sft_targets);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        d.sft_targets[j.at("id").get<std::string>()].push_back(j.at("response").get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::kConfig, config.sft_targets.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    for (const auto& [id, responses] : d.sft_targets) {
      for (const auto& r : responses) texts.push_back(r);
    }
  }
  d.tokenizer = TokenizerSpec::build(texts, config.tokenizer);
  auto dedup = dedup_corpus(make_corpus(records, d.tokenizer));
  d.corpus = std::move(dedup.corpus);
  d.removed_duplicates = dedup.removed;
  const auto heldout = static_cast<std::size_t>(std::llround(config.heldout_fraction * static_cast<double>(d.corpus.size())));
  d.train_size = d.corpus.size() - heldout;
  for (const auto& [id, responses] : d.sft_targets) {
    if (!d.corpus.contains(id)) throw Error(ErrorKind::kConfig, "sft target for unknown document '" + id + "'");
  }
  return d;
}

RetrieverModel make_retriever(const RunConfig& config, const PreparedData& data) {
  return RetrieverModel(data.tokenizer.size(), config.retriever_dim, config.retriever_seed);
}

fs::path groups_path(const RunConfig& config) { return config.out / "groups.jsonl"; }

fs::path seed_dir(const RunConfig& config, std::uint64_t seed) {
  return config.out / ("seed-" + std::to_string(seed));
}

SplitGroups load_split_groups(const RunConfig& config, const PreparedData& data) {
  const fs::path path = groups_path(config);
  if (!fs::exists(path)) throw Error(ErrorKind::kMissingArtifact, "groups file " + path.string() + " not found; run build-groups");
  const GroupsFile file = load_groups(path);
  if (file.k != config.rlcf.K || file.retriever_seed != config.retriever_seed || file.dim != config.retriever_dim) {
    throw Error(ErrorKind::kConfig, "groups file " + path.string() + " was built with a different retriever or K");
  }
  SplitGroups out;
  for (const auto& g : file.groups) {
    for (const auto& id : g.members()) {
      if (!data.corpus.contains(id)) throw Error(ErrorKind::kConfig, "groups file names unknown document '" + id + "'");
    }
    (data.heldout(g.anchor) ? out.heldout : out.train).push_back(g);
  }
  return out;
}

void cmd_build_groups(const RunConfig& config, const CommandOptions& options) {
  validate_paths(config, Stage::kBuildGroups);
  OutputLock lock(config.out);
  const PreparedData data = prepare_data(config);
  const RetrieverModel retriever = make_retriever(config, data);
  log_line(options, "build-groups: " + std::to_string(data.corpus.size()) + " documents, " +
                        std::to_string(data.removed_duplicates) + " duplicates removed");
  GroupsFile file;
  file.k = config.rlcf.K;
  file.retriever_seed = config.retriever_seed;
  file.dim = config.retriever_dim;
  for (const Corpus& part : {data.train_corpus(), data.heldout_corpus()}) {
    if (part.empty()) continue;
    for (auto& g : build_groups(part, config.rlcf.K, retriever)) file.groups.push_back(std::move(g));
  }
  save_groups(file, groups_path(config));
  std::ofstream(config.out / "config.resolved") << config.canonical();
}

namespace {

bool complete_state(const fs::path& dir) {
  return fs::exists(dir / "manifest.json") && fs::exists(dir / "trainer_state.json");
}

std::optional<std::pair<std::size_t, fs::path>> latest_step(const fs::path& rlcf_dir) {
  std::optional<std::pair<std::size_t, fs::path>> best;
  if (!fs::exists(rlcf_dir)) return best;
  for (const auto& e : fs::directory_iterator(rlcf_dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("step-", 0) != 0 || !complete_state(e.path())) continue;
    const std::size_t step = std::stoul(name.substr(5));
    if (!best || step > best->first) best = {step, e.path()};
  }
  return best;
}

std::string step_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%06zu", step);
  return buf;
}

std::vector<SftPair> sft_pairs(const PreparedData& data) {
  std::vector<SftPair> pairs;
  for (std::size_t i = 0; i < data.train_size; ++i) {
    const Document& doc = data.corpus[i];
    const auto it = data.sft_targets.find(doc.id);
    if (it == data.sft_targets.end()) continue;
    for (const auto& r : it->second) pairs.push_back({doc, r});
  }
  return pairs;
}

void train_seed(const RunConfig& config, const PreparedData& data, const SplitGroups& groups,
                const RetrieverModel& retriever, std::uint64_t seed, const CommandOptions& options) {
  const fs::path dir = seed_dir(config, seed);
  const std::string tag = "seed " + std::to_string(seed) + ": ";
  if (!options.resume && fs::exists(dir)) {
    throw Error(ErrorKind::kConfig, "output " + dir.string() + " exists; pass --resume or choose another --out");
  }
  fs::create_directories(dir / "rlcf");
  ModelDescriptor desc = config.model;
  desc.vocab = data.tokenizer.size();

  TrainConfig pre;
  pre.model = desc;
  pre.epochs = config.pretrain_epochs;
  pre.learning_rate = config.pretrain_lr;
  pre.batch_size = config.pretrain_batch_size;
  pre.clip_norm = config.rlcf.clip_norm;
  pre.seed = seed;

  PolicyParams pretrained;
  if (options.resume && fs::exists(dir / "pretrain" / "manifest.json")) {
    pretrained = load_checkpoint(dir / "pretrain", &data.tokenizer);
  } else {
    pretrained = pretrain(data.train_corpus(), pre, [&](std::size_t e, double loss) {
                   log_line(options, tag + "pretrain epoch " + std::to_string(e) + " loss " + fmt(loss));
                 }).params;
    save_checkpoint(dir / "pretrain", pretrained, data.tokenizer, {seed});
  }

  PolicyParams reference;
  if (options.resume && fs::exists(dir / "reference" / "manifest.json")) {
    reference = load_checkpoint(dir / "reference", &data.tokenizer);
  } else {
    const auto examples = prepare_sft(sft_pairs(data), data.prompt_template(config.task), data.tokenizer, data.budget(config));
    if (examples.empty()) throw Error(ErrorKind::kConfig, "no sft targets for training documents");
    TrainConfig sc = pre;
    sc.epochs = config.sft_epochs;
    sc.learning_rate = config.sft_lr;
    sc.batch_size = config.sft_batch_size;
    reference = sft(pretrained, examples, sc, [&](std::size_t e, double loss) {
                  log_line(options, tag + "sft epoch " + std::to_string(e) + " loss " + fmt(loss));
                }).params;
    // Step-0 snapshot: the frozen reference policy.
    save_checkpoint(dir / "reference", reference, data.tokenizer, {seed});
  }

  RlcfConfig rc = config.rlcf;
  rc.seed = seed;
  std::optional<RlcfState> resume;
  const fs::path log_path = dir / "train_log.jsonl";
  std::vector<TrainLogRow> kept;
  if (options.resume) {
    if (const auto latest = latest_step(dir / "rlcf")) {
      resume = load_rlcf_state(latest->second, &data.tokenizer);
      log_line(options, tag + "resuming from " + latest->second.string());
    }
  }
  if (resume && fs::exists(log_path)) {
    for (const auto& row : load_training_log(log_path)) {
      if (row.step < resume->step) kept.push_back(row);
    }
  }
  {
    std::ofstream log(log_path, std::ios::trunc);
    for (const auto& row : kept) log << to_jsonl(row) << '\n';
  }
  std::ofstream log(log_path, std::ios::app);

  const RolloutContext ctx{data.corpus, data.tokenizer, retriever, data.prompt_template(config.task),
                           config.model.context};
  TrainHooks hooks;
  hooks.on_step = [&](const TrainLogRow& row) {
    log << to_jsonl(row) << '\n' << std::flush;
    if ((row.step + 1) % 25 == 0) {
      log_line(options, tag + "step " + std::to_string(row.step + 1) + " batched_mrr " + fmt(row.mean_batched_mrr) +
                            " kl " + fmt(row.mean_kl));
    }
  };
  hooks.on_checkpoint = [&](const RlcfState& state) {
    save_rlcf_state(dir / "rlcf" / step_name(state.step), state, data.tokenizer, {seed});
  };
  const RlcfResult result = train(groups.train, reference, ctx, rc, std::move(resume), hooks);
  if (result.reference_hash_start != result.reference_hash_end) {
    throw Error(ErrorKind::kTrainingAbort, "reference policy changed during training");
  }
  save_rlcf_state(dir / "rlcf" / step_name(result.state.step), result.state, data.tokenizer, {seed});
  save_checkpoint(dir / "final", result.state.policy, data.tokenizer, {seed});
}

}  // namespace

void cmd_train(const RunConfig& config, const CommandOptions& options) {
  validate_paths(config, Stage::kTrain);
  config.rlcf.validate();
  OutputLock lock(config.out);
  const PreparedData data = prepare_data(config);
  const SplitGroups groups = load_split_groups(config, data);
  if (groups.train.empty()) throw Error(ErrorKind::kConfig, "no training groups");
  const RetrieverModel retriever = make_retriever(config, data);
  std::ofstream(config.out / "config.resolved") << config.canonical();
  for (const auto seed : config.seeds) train_seed(config, data, groups, retriever, seed, options);
}

MetricReport cmd_eval(const RunConfig& config, const CommandOptions& options) {
  validate_paths(config, Stage::kEval);
  if (options.checkpoints.size() != 1) throw Error(ErrorKind::kConfig, "eval needs exactly one --checkpoint");
  OutputLock lock(config.out);
  const PreparedData data = prepare_data(config);
  const SplitGroups groups = load_split_groups(config, data);
  if (groups.heldout.empty()) throw Error(ErrorKind::kConfig, "no held-out groups (heldout_fraction is 0)");
  const RetrieverModel retriever = make_retriever(config, data);
  const PromptTemplate& tmpl = data.prompt_template(config.task);
  const PromptBudget budget = data.budget(config);

  const std::string ckpt = options.checkpoints.front().string();
  const bool per_seed = ckpt.find("{seed}") != std::string::npos;
  const std::vector<std::uint64_t> seeds = per_seed ? config.seeds : std::vector<std::uint64_t>{config.seeds.front()};

  std::map<std::string, std::vector<std::optional<double>>> values;
  std::size_t undefined = 0;
  std::vector<std::string> tags;
  nlohmann::ordered_json responses_out = nlohmann::ordered_json::array();
  for (const auto seed : seeds) {
    const fs::path path = replace_seed(ckpt, seed);
    if (!fs::exists(path / "manifest.json")) {
      throw Error(ErrorKind::kMissingArtifact, "checkpoint " + path.string() + " not found");
    }
    const PolicyParams policy = load_checkpoint(path, &data.tokenizer);
    tags.push_back(path.string());
    std::map<std::string, std::string> responses;
    for (const auto& g : groups.heldout) {
      for (const auto& id : g.members()) {
        if (responses.count(id)) continue;
        const TokenSeq prompt = assemble_prompt(tmpl, data.corpus.at(id), data.tokenizer, budget);
        responses[id] = data.tokenizer.decode(generate(policy, prompt, DecodeMode::greedy_mode(), budget.max_response).content());
      }
    }
    double rd_sum = 0.0;
    std::size_t rd_n = 0;
    for (const auto& g : groups.heldout) {
      std::vector<const Document*> neighbors;
      for (const auto& n : g.neighbors) neighbors.push_back(&data.corpus.at(n));
      if (neighbors.empty()) continue;
      const auto rd = rouge_diff(data.corpus.at(g.anchor), neighbors, responses.at(g.anchor), data.tokenizer);
      if (rd) {
        rd_sum += *rd;
        ++rd_n;
      } else {
        ++undefined;
      }
    }
    values["rouge_diff"].push_back(rd_n ? std::optional<double>(rd_sum / static_cast<double>(rd_n)) : std::nullopt);
    values["batched_mrr"].push_back(batched_mrr_eval(groups.heldout, responses, retriever, data.corpus, data.tokenizer).mean);
    for (const auto& [id, text] : responses) {
      responses_out.push_back({{"checkpoint", path.string()}, {"id", id}, {"response", text}});
    }
    log_line(options, "eval " + path.string() + ": batched_mrr " + fmt(*values["batched_mrr"].back()));
  }
  MetricReport report = aggregate_report(values, {{"rouge_diff", undefined}});
  report.config_hash = config.hash();
  report.checkpoints = tags;
  save_report(report, config.out / "eval_report.json");
  std::ofstream resp(config.out / "eval_responses.jsonl");
  for (const auto& r : responses_out) resp << r.dump() << '\n';
  return report;
}

MetricReport cmd_compare_augmentation(const RunConfig& config, const CommandOptions& options) {
  validate_paths(config, Stage::kCompareAug);
  if (options.checkpoints.size() != 2) {
    throw Error(ErrorKind::kConfig, "compare-aug needs --checkpoint <vanilla> --checkpoint <rlcf>");
  }
  config.aug.validate();
  OutputLock lock(config.out);
  const PreparedData data = prepare_data(config);
  const PromptTemplate& tmpl = data.prompt_template(config.aug_task);

  // Eval queries: gold distinguishing tokens of every held-out document.
  Qrels qrels;
  std::map<std::string, std::string> queries;
  for (const auto& g : load_gold(config.gold)) {
    if (!data.corpus.contains(g.id) || !data.heldout(g.id)) continue;
    std::string q;
    for (std::size_t i = 0; i < g.distinguishing_tokens.size(); ++i) {
      const bool keep = config.aug_eval_slots.empty() ||
                        std::find(config.aug_eval_slots.begin(), config.aug_eval_slots.end(), i) !=
                            config.aug_eval_slots.end();
      if (keep) q += (q.empty() ? "" : " ") + g.distinguishing_tokens[i];
    }
    if (q.empty()) continue;
    const std::string qid = "eval-" + g.id;
    queries[qid] = q;
    qrels[qid][g.id] = 1;
  }
  if (queries.empty()) throw Error(ErrorKind::kConfig, "gold file yields no held-out eval queries");

  const char* arms[2] = {"vanilla", "rlcf"};
  std::vector<TrainingPair> pairs[2];
  for (int a = 0; a < 2; ++a) {
    const fs::path path = options.checkpoints[static_cast<std::size_t>(a)];
    if (!fs::exists(path / "manifest.json")) {
      throw Error(ErrorKind::kMissingArtifact, "checkpoint " + path.string() + " not found");
    }
    const PolicyParams policy = load_checkpoint(path, &data.tokenizer);
    const GenPairsResult gen = gen_training_pairs(data.corpus, policy, tmpl, data.tokenizer, data.budget(config), path.string());
    for (const auto& id : gen.skipped) log_line(options, std::string(arms[a]) + ": no query for " + id);
    pairs[a] = gen.pairs;
    save_pairs(pairs[a], config.out / ("pairs_" + std::string(arms[a]) + ".jsonl"));
  }

  const char* metric_names[4] = {"mrr_at_10", "recall_at_20", "recall_at_100", "ndcg_at_10"};
  std::map<std::string, std::vector<std::optional<double>>> values;
  std::ofstream csv(config.out / "compare_aug.csv");
  csv.precision(17);
  csv << "seed,arm,metric,value\n";
  for (const auto seed : config.seeds) {
    AugTrainConfig ac = config.aug;
    ac.seed = seed;
    double scores[2][4];
    for (int a = 0; a < 2; ++a) {
      const auto trained = train_dual_encoder(pairs[a], data.corpus, data.tokenizer, ac);
      const RetrievalScores s = evaluate_retriever(trained.encoder, qrels, queries, data.corpus, data.tokenizer);
      const double v[4] = {s.mrr_at_10, s.recall_at_20, s.recall_at_100, s.ndcg_at_10};
      for (int m = 0; m < 4; ++m) {
        scores[a][m] = v[m];
        values[std::string(arms[a]) + "." + metric_names[m]].push_back(v[m]);
        csv << seed << ',' << arms[a] << ',' << metric_names[m] << ',' << v[m] << '\n';
      }
      log_line(options, "seed " + std::to_string(seed) + " " + arms[a] + ": mrr_at_10 " + fmt(v[0]));
    }
    for (int m = 0; m < 4; ++m) values[std::string("delta.") + metric_names[m]].push_back(scores[1][m] - scores[0][m]);
  }
  MetricReport report = aggregate_report(values);
  report.config_hash = config.hash();
  report.checkpoints = {options.checkpoints[0].string(), options.checkpoints[1].string()};
  save_report(report, config.out / "compare_aug.json");
  return report;
}

MetricReport cmd_report(const RunConfig& config, const CommandOptions& options) {
  validate_paths(config, Stage::kReport);
  OutputLock lock(config.out);
  std::map<std::string, std::vector<std::optional<double>>> values;
  std::ofstream csv(config.out / "training_curves.csv");
  csv.precision(17);
  csv << "seed,step,metric,value\n";
  for (const auto seed : config.seeds) {
    const fs::path path = seed_dir(config, seed) / "train_log.jsonl";
    if (!fs::exists(path)) throw Error(ErrorKind::kMissingArtifact, "training log " + path.string() + " not found");
    const auto rows = load_training_log(path);
    if (rows.empty()) throw Error(ErrorKind::kMissingArtifact, "training log " + path.string() + " is empty");
    for (const auto& r : rows) {
      csv << seed << ',' << r.step << ",batched_mrr," << r.mean_batched_mrr << '\n'
          << seed << ',' << r.step << ",kl," << r.mean_kl << '\n'
          << seed << ',' << r.step << ",clip_fraction," << r.clip_fraction << '\n';
    }
    // Last 10% of steps, at least one row.
    const std::size_t tail = std::max<std::size_t>(1, rows.size() / 10);
    double bmrr = 0.0, kl = 0.0;
    for (std::size_t i = rows.size() - tail; i < rows.size(); ++i) {
      bmrr += rows[i].mean_batched_mrr;
      kl += rows[i].mean_kl;
    }
    values["train_batched_mrr_tail"].push_back(bmrr / static_cast<double>(tail));
    values["train_kl_tail"].push_back(kl / static_cast<double>(tail));
    values["steps"].push_back(static_cast<double>(rows.size()));
    log_line(options, "seed " + std::to_string(seed) + ": " + std::to_string(rows.size()) + " steps");
  }
  MetricReport report = aggregate_report(values);
  report.config_hash = config.hash();
  for (const auto seed : config.seeds) report.checkpoints.push_back((seed_dir(config, seed) / "final").string());
  save_report(report, config.out / "training_report.json");
  return report;
}

void cmd_synth(const SynthOptions& o, const fs::path& out) {
  if (o.generic_copies + o.detail_copies == 0) throw Error(ErrorKind::kConfig, "need at least one sft target per document");
  fs::create_directories(out);
  const SynthCorpus sc = synth_corpus(o.family, o.groups, o.width, o.seed);
  {
    std::ofstream f(out / "corpus.jsonl");
    for (const auto& r : sc.records) f << nlohmann::json{{"id", r.id}, {"text", r.text}}.dump() << '\n';
  }
  save_gold(sc.gold, out / "gold.jsonl");
  {
    std::ofstream f(out / "sft_targets.jsonl");
    for (const auto& r : sc.records) {
      const std::string norm = normalize_text(r.text);
      for (std::size_t i = 0; i < o.generic_copies; ++i) {
        f << nlohmann::json{{"id", r.id}, {"response", reference_response(o.family, norm, false)}}.dump() << '\n';
      }
      for (std::size_t i = 0; i < o.detail_copies; ++i) {
        f << nlohmann::json{{"id", r.id}, {"response", reference_response(o.family, norm, true)}}.dump() << '\n';
      }
    }
  }
  // In-context examples come from a disjoint draw of the same family.
  const SynthCorpus extra = synth_corpus(o.family, 1, std::max<std::size_t>(1, o.template_examples), o.seed + 1);
  std::map<std::string, PromptTemplate> templates;
  templates["summarize"] = PromptTemplate{"summarize", "write a one line headline for the report", {}};
  templates["query"] = PromptTemplate{"query", "write a search query that finds the report", {}};
  for (std::size_t i = 0; i < o.template_examples && i < extra.records.size(); ++i) {
    const std::string norm = normalize_text(extra.records[i].text);
    const std::string detailed = reference_response(o.family, norm, true);
    templates["summarize"].examples.push_back({norm, detailed});
    templates["query"].examples.push_back({norm, detailed});
  }
  save_templates(templates, out / "templates.json");
  std::ofstream(out / "rlcf.conf") << "corpus = corpus.jsonl\nsft_targets = sft_targets.jsonl\ngold = gold.jsonl\n"
                                      "templates = templates.json\nout = run\nseeds = 0,1,2\n";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kTrainingAbort:
      return 3;
    case ErrorKind::kMissingArtifact:
      return 4;
    default:
      return 2;
  }
}

}  // namespace rlcf
