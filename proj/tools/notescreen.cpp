// notescreen: command-line entry point.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "notescreen/adapt.hpp"
#include "notescreen/corpus.hpp"
#include "notescreen/eval.hpp"
#include "notescreen/experiment.hpp"
#include "notescreen/explain.hpp"
#include "notescreen/pretrain.hpp"
#include "notescreen/review.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace notescreen;

namespace {

constexpr const char* kRunRootEnv = "NOTESCREEN_RUN_ROOT";

const std::vector<std::string> kCommands = {"ingest", "split", "synth",      "train",
                                            "eval",   "explain", "experiment", "serve"};

// ---- config file merging -------------------------------------------------------------

std::string scalar_arg(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (const auto& x : v) {
      if (!out.empty()) out += ',';
      out += scalar_arg(x);
    }
    return out;
  }
  return v.dump();
}

// Appends "--key value" for every config entry whose flag is absent from the command line.
// Entries may sit at top level or under a section named after the command.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string config_path;
  std::string command;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    if (command.empty() && std::find(kCommands.begin(), kCommands.end(), args[i]) != kCommands.end()) {
      command = args[i];
    }
  }
  if (config_path.empty()) return args;
  std::ifstream in(config_path);
  if (!in) throw DataError("cannot read config file " + config_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("config file " + config_path + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw DataError("config file must hold a JSON object");
  json flat = json::object();
  for (const auto& [k, v] : doc.items()) {
    if (!v.is_object()) flat[k] = v;
  }
  if (!command.empty() && doc.contains(command) && doc.at(command).is_object()) {
    for (const auto& [k, v] : doc.at(command).items()) flat[k] = v;
  }
  auto given = [&](const std::string& flag) {
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  for (const auto& [k, v] : flat.items()) {
    std::string flag = "--" + k;
    std::replace(flag.begin() + 2, flag.end(), '_', '-');
    if (flag == "--config" || given(flag)) continue;
    if (v.is_boolean()) {
      if (v.get<bool>()) args.push_back(flag);
      continue;
    }
    args.push_back(flag);
    args.push_back(scalar_arg(v));
  }
  return args;
}

// ---- shared helpers ------------------------------------------------------------------

fs::path run_dir(const std::string& out, const std::string& command) {
  fs::path dir;
  if (!out.empty()) {
    dir = out;
  } else {
    const char* root = std::getenv(kRunRootEnv);
    dir = fs::path(root != nullptr && *root != '\0' ? root : "runs") / command;
  }
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

void echo_config(const fs::path& dir, const std::string& command, json options) {
  write_json(dir / "config.json",
             {{"command", command}, {"tool_version", kVersion}, {"options", std::move(options)}});
}

corpus::Cohort load_cohort(const std::string& path, const std::string& format) {
  std::string f = format;
  if (f.empty()) f = fs::path(path).extension() == ".csv" ? "csv" : "jsonl";
  return corpus::ingest(path, corpus::parse_format(f));
}

corpus::Cohort partition(const corpus::Cohort& cohort, const corpus::DataSplit& split,
                         const std::string& name) {
  if (name == "train") return cohort.subset(split.train);
  if (name == "val") return cohort.subset(split.val);
  if (name == "test") return cohort.subset(split.test);
  if (name == "all") return cohort;
  throw DataError("unknown partition \"" + name + "\"");
}

std::vector<Label> labels_of(const corpus::Cohort& c) {
  std::vector<Label> out;
  for (const auto& n : c.notes()) out.push_back(n.label);
  return out;
}

struct LoadedModel {
  adapt::AdaptedModel model;
  adapt::TrainConfig config;
  textproc::Vocabulary vocab;
};

LoadedModel load_model(const std::string& dir) {
  LoadedModel m;
  m.model = adapt::load_checkpoint(fs::path(dir) / "checkpoint.json", &m.config);
  m.vocab = textproc::Vocabulary::from_json(read_json(fs::path(dir) / "vocab.json"));
  if (m.vocab.size() != m.model.base.embedding.rows) {
    throw DataError("vocabulary mismatch: vocab.json has " + std::to_string(m.vocab.size()) +
                    " ids, checkpoint has " + std::to_string(m.model.base.embedding.rows));
  }
  return m;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw DataError("not a number: \"" + item + "\"");
    }
  }
  return out;
}

// ---- commands ------------------------------------------------------------------------

struct IngestArgs {
  std::string input, format, out;
  bool exclude_dual = false;
  bool truncate = false;
};

void cmd_ingest(const IngestArgs& a) {
  corpus::Cohort c = load_cohort(a.input, a.format);
  const std::size_t raw = c.size();
  if (a.exclude_dual) c = corpus::exclude_dual_diagnosis(c);
  if (a.truncate) c = corpus::truncate_at_markers(c, corpus::kDefaultTruncationMarkers);
  const auto dir = run_dir(a.out, "ingest");
  corpus::save_jsonl(c, dir / "cohort.jsonl");
  write_json(dir / "summary.json", {{"input_notes", raw},
                                    {"notes", c.size()},
                                    {"epilepsy", c.count(Label::Epilepsy)},
                                    {"pnes", c.count(Label::PNES)}});
  echo_config(dir, "ingest", {{"input", a.input}, {"format", a.format},
                              {"exclude_dual", a.exclude_dual}, {"truncate", a.truncate}});
  std::cout << "ingested " << c.size() << " notes into " << (dir / "cohort.jsonl").string() << '\n';
}

struct SplitArgs {
  std::string cohort, format, ratios = "7,1,2", out;
  std::uint64_t seed = 0;
  bool no_stratify = false;
};

void cmd_split(const SplitArgs& a) {
  const auto c = load_cohort(a.cohort, a.format);
  const auto r = parse_list(a.ratios);
  if (r.size() != 3) throw DataError("--ratios needs three values");
  const double sum = r[0] + r[1] + r[2];
  corpus::SplitSpec spec;
  spec.ratios = {r[0] / sum, r[1] / sum, r[2] / sum};
  spec.seed = a.seed;
  spec.stratify = !a.no_stratify;
  const auto split = corpus::stratified_split(c, spec);
  const auto dir = run_dir(a.out, "split");
  write_json(dir / "split.json", corpus::split_to_json(split));
  echo_config(dir, "split", {{"cohort", a.cohort}, {"ratios", r}, {"seed", a.seed},
                             {"stratify", spec.stratify}});
  std::cout << "train " << split.train.size() << " val " << split.val.size() << " test "
            << split.test.size() << '\n';
}

struct SynthArgs {
  std::size_t n = 2000;
  double epilepsy_frac = 0.768;
  double signal_strength = 1.0;
  double cue_noise = 0.0;
  std::uint64_t seed = 0;
  bool hard = false;
  std::string out;
};

void cmd_synth(const SynthArgs& a) {
  corpus::SyntheticOptions o;
  if (a.hard) {
    o = corpus::hard_synthetic_options(a.n, a.seed);
  } else {
    o.signal_strength = a.signal_strength;
    o.cue_noise = a.cue_noise;
  }
  o.n = a.n;
  o.seed = a.seed;
  o.epilepsy_fraction = a.epilepsy_frac;
  const auto syn = corpus::generate_synthetic(o);
  const auto dir = run_dir(a.out, "synth");
  corpus::save_jsonl(syn.cohort, dir / "cohort.jsonl");
  write_json(dir / "truth.json", corpus::truth_to_json(syn));
  echo_config(dir, "synth", {{"n", a.n}, {"epilepsy_frac", a.epilepsy_frac}, {"seed", a.seed},
                             {"signal_strength", o.signal_strength}, {"cue_noise", o.cue_noise},
                             {"hard", a.hard}});
  std::cout << "epilepsy " << syn.cohort.count(Label::Epilepsy) << " pnes "
            << syn.cohort.count(Label::PNES) << '\n';
}

struct TrainArgs {
  std::string cohort, format, split, out;
  std::string mode = "qlora", optimizer = "adam", checkpoint_rule = "best_val_auc";
  std::size_t epochs = 3, batch_size = 1, embed_dim = 64, hidden_dim = 128;
  double lr = 5e-4, warmup = 0.03;
  std::uint64_t seed = 0;
  bool no_pretrain = false;
};

void cmd_train(const TrainArgs& a) {
  const auto c = load_cohort(a.cohort, a.format);
  const auto split = corpus::split_from_json(read_json(a.split));
  const auto train = partition(c, split, "train");
  const auto val = partition(c, split, "val");
  adapt::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.peak_lr = a.lr;
  cfg.warmup_ratio = a.warmup;
  cfg.seed = a.seed;
  cfg.mode = adapt::parse_mode(a.mode);
  cfg.optimizer = adapt::parse_optimizer(a.optimizer);
  cfg.checkpoint_rule = adapt::parse_rule(a.checkpoint_rule);
  cfg.validate();
  const auto vocab = textproc::build_vocab(train);
  auto base = model::init_params({vocab.size(), a.embed_dim, a.hidden_dim}, a.seed);
  if (!a.no_pretrain) model::pretrain_embeddings(base, train, vocab);
  const auto result = adapt::train(adapt::prepare_model(std::move(base), cfg), train, val, vocab, cfg);
  const auto dir = run_dir(a.out, "train");
  adapt::save_checkpoint(dir / "checkpoint.json", result.model, cfg);
  write_json(dir / "vocab.json", vocab.to_json());
  std::ofstream hist(dir / "history.csv");
  adapt::write_history_csv(result.history, hist);
  json opts = adapt::config_to_json(cfg);
  opts["cohort"] = a.cohort;
  opts["split"] = a.split;
  opts["embed_dim"] = a.embed_dim;
  opts["hidden_dim"] = a.hidden_dim;
  opts["pretrain"] = !a.no_pretrain;
  echo_config(dir, "train", opts);
  const auto& last = result.history.epochs.back();
  std::cout << "trained " << result.history.epochs.size() << " epochs, selected epoch "
            << result.history.selected_epoch << ", last val AUC " << last.val_auc << '\n';
}

struct EvalArgs {
  std::string model_dir, cohort, format, split, part = "test", out;
  std::size_t n_boot = eval::kDefaultBootstrapReplicates;
  std::uint64_t seed = 0;
  double threshold = 0.5;
};

void cmd_eval(const EvalArgs& a) {
  const auto m = load_model(a.model_dir);
  const auto c = load_cohort(a.cohort, a.format);
  const auto split = corpus::split_from_json(read_json(a.split));
  const auto part = partition(c, split, a.part);
  const auto scores = adapt::predict(m.model.effective(), part, m.vocab);
  const auto labels = labels_of(part);
  const auto report = eval::evaluate(scores, labels, a.n_boot, a.seed, a.threshold);
  const auto dir = run_dir(a.out, "eval");
  write_json(dir / "report.json", eval::report_to_json(report));
  std::ofstream conf(dir / "confusion.csv");
  eval::write_confusion_csv(report.confusion, conf);
  std::ofstream pred(dir / "predictions.csv");
  pred.precision(17);
  pred << "note_id,label,p_epilepsy\n";
  for (std::size_t i = 0; i < part.size(); ++i) {
    pred << part[i].id << ',' << label_name(part[i].label) << ',' << scores[i] << '\n';
  }
  echo_config(dir, "eval", {{"model", a.model_dir}, {"cohort", a.cohort}, {"split", a.split},
                            {"partition", a.part}, {"n_boot", a.n_boot}, {"seed", a.seed},
                            {"threshold", a.threshold}});
  std::cout << "AUC " << report.auc << " [" << report.ci_auc.lo << ", " << report.ci_auc.hi
            << "], accuracy " << report.accuracy << '\n';
}

struct ExplainArgs {
  std::string model_dir, cohort, format, split, part = "test", target = "Epilepsy", lexicon, out;
  std::size_t m_steps = explain::kDefaultSteps, k = explain::kDefaultTopK, limit = 0;
};

void cmd_explain(const ExplainArgs& a) {
  const auto m = load_model(a.model_dir);
  const auto c = load_cohort(a.cohort, a.format);
  corpus::Cohort part = c;
  if (!a.split.empty()) part = partition(c, corpus::split_from_json(read_json(a.split)), a.part);
  const explain::LexiconTagger custom =
      a.lexicon.empty() ? explain::LexiconTagger{} : explain::LexiconTagger::load(a.lexicon);
  const explain::Tagger& tagger = a.lexicon.empty() ? explain::LexiconTagger::builtin() : custom;
  const auto params = m.model.effective();
  const model::ReferenceScorer scorer(params);
  explain::ExplainOptions opts;
  opts.m_steps = a.m_steps;
  opts.k = a.k;
  opts.target_class = parse_label(a.target);

  const auto dir = run_dir(a.out, "explain");
  std::ofstream reports(dir / "attributions.jsonl");
  std::ofstream cats(dir / "category_scores.csv");
  cats.precision(17);
  cats << "note_id,category,A_c\n";
  const std::size_t n = a.limit == 0 ? part.size() : std::min(a.limit, part.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& note = part[i];
    const auto prepared = textproc::prepare(note.text, m.vocab);
    const auto pred = model::forward(params, prepared.tokens, prepared.windows);
    const auto result = explain::explain_note(scorer, note.id, note.text, prepared, tagger, opts);
    json doc = explain::attribution_to_json(result);
    doc["predicted_label"] = label_name(pred.predicted);
    doc["p_epilepsy"] = pred.p_epilepsy;
    reports << doc.dump() << '\n';
    for (const auto& cs : result.category_scores) {
      cats << note.id << ',' << explain::category_name(cs.category) << ',' << cs.value << '\n';
    }
  }
  echo_config(dir, "explain", {{"model", a.model_dir}, {"cohort", a.cohort}, {"split", a.split},
                               {"partition", a.part}, {"m", a.m_steps}, {"k", a.k},
                               {"target", a.target}, {"limit", a.limit}, {"lexicon", a.lexicon}});
  std::cout << "explained " << n << " notes\n";
}

struct ExperimentArgs {
  std::string kind, values, cohort, format, split, out;
  std::size_t n = 2000, jobs = 1, epochs = 3, n_boot = eval::kDefaultBootstrapReplicates;
  std::uint64_t seed = 0;
  bool no_pretrain = false;
};

void cmd_experiment(const ExperimentArgs& a) {
  corpus::Cohort c;
  corpus::DataSplit split;
  if (!a.cohort.empty()) {
    c = load_cohort(a.cohort, a.format);
    if (a.split.empty()) throw DataError("--split is required with --cohort");
    split = corpus::split_from_json(read_json(a.split));
  } else {
    c = corpus::generate_synthetic(corpus::hard_synthetic_options(a.n, a.seed)).cohort;
    corpus::SplitSpec spec;
    spec.seed = a.seed;
    split = corpus::stratified_split(c, spec);
  }
  experiment::SweepOptions o;
  o.kind = experiment::parse_sweep(a.kind);
  o.values = a.values.empty() ? experiment::default_sweep_values(o.kind) : parse_list(a.values);
  o.seed = a.seed;
  o.jobs = a.jobs;
  o.pipeline.train.seed = a.seed;
  o.pipeline.train.epochs = a.epochs;
  o.pipeline.n_boot = a.n_boot;
  o.pipeline.pretrain = !a.no_pretrain;
  const auto points = experiment::run_sweep(partition(c, split, "train"), partition(c, split, "val"),
                                            partition(c, split, "test"), o);
  const auto dir = run_dir(a.out, "experiment");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto sub = dir / ("point_" + std::to_string(i));
    fs::create_directories(sub);
    json doc{{"value", points[i].value}, {"ok", points[i].ok}, {"n_train", points[i].n_train}};
    if (points[i].ok) doc["report"] = eval::report_to_json(points[i].report);
    else doc["error"] = points[i].error;
    write_json(sub / "point.json", doc);
  }
  std::ofstream csv(dir / "sweep.csv");
  experiment::write_sweep_csv(o.kind, points, csv);
  echo_config(dir, "experiment", {{"kind", a.kind}, {"values", o.values}, {"cohort", a.cohort},
                                  {"split", a.split}, {"n", a.n}, {"seed", a.seed},
                                  {"jobs", a.jobs}, {"epochs", a.epochs}, {"n_boot", a.n_boot},
                                  {"pretrain", !a.no_pretrain}});
  for (const auto& p : points) {
    std::cout << experiment::sweep_name(o.kind) << ' ' << p.value << ": "
              << (p.ok ? "AUC " + std::to_string(p.report.auc) : "failed (" + p.error + ")") << '\n';
  }
}

struct ServeArgs {
  std::string host = "127.0.0.1", log, out;
  int port = 8080;
  std::vector<std::string> cohorts, attributions, cohort_ids;
};

review::ReviewServer* g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

json read_jsonl_array(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file " + path);
  json arr = json::array();
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      arr.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw DataError(path + " line " + std::to_string(no) + ": " + e.what());
    }
  }
  return arr;
}

void cmd_serve(const ServeArgs& a) {
  if (!a.attributions.empty() && a.attributions.size() != a.cohorts.size()) {
    throw DataError("--attributions must be given once per --cohort");
  }
  if (!a.cohort_ids.empty() && a.cohort_ids.size() != a.cohorts.size()) {
    throw DataError("--cohort-id must be given once per --cohort");
  }
  const auto dir = run_dir(a.out, "serve");
  const fs::path log = a.log.empty() ? dir / "events.jsonl" : fs::path(a.log);
  review::ReviewStore store(log);
  for (std::size_t i = 0; i < a.cohorts.size(); ++i) {
    json body{{"cohort_id", a.cohort_ids.empty() ? fs::path(a.cohorts[i]).stem().string() : a.cohort_ids[i]},
              {"notes", read_jsonl_array(a.cohorts[i])}};
    if (!a.attributions.empty()) body["attributions"] = read_jsonl_array(a.attributions[i]);
    const auto r = review::dispatch(store, "POST", "/cohorts", body.dump());
    if (r.status == 409) continue;  // already present in the replayed log
    if (r.status != 200) throw DataError("cohort " + a.cohorts[i] + ": " + r.body.value("message", ""));
  }
  review::ReviewServer server(store);
  const int port = server.bind(a.host, a.port);
  echo_config(dir, "serve", {{"host", a.host}, {"port", port}, {"log", log.string()},
                             {"cohorts", a.cohorts}, {"attributions", a.attributions}});
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on http://" << a.host << ':' << port << std::endl;
  server.listen();
  g_server = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clinical-note screening toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::string config_path;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON file supplying defaults for unset flags");
  };

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Read, validate and curate a raw cohort");
  ingest->add_option("--input", ia.input, "JSONL or CSV file")->required();
  ingest->add_option("--format", ia.format, "jsonl or csv (default: by extension)");
  ingest->add_flag("--exclude-dual", ia.exclude_dual, "Drop patients carrying both labels");
  ingest->add_flag("--truncate", ia.truncate, "Cut notes at final-diagnosis markers");
  ingest->add_option("--out", ia.out, "Run directory");
  with_config(ingest);

  SplitArgs sa;
  auto* split = app.add_subcommand("split", "Stratified train/val/test split");
  split->add_option("--cohort", sa.cohort)->required();
  split->add_option("--format", sa.format);
  split->add_option("--ratios", sa.ratios, "train,val,test weights")->capture_default_str();
  split->add_option("--seed", sa.seed);
  split->add_flag("--no-stratify", sa.no_stratify);
  split->add_option("--out", sa.out);
  with_config(split);

  SynthArgs ya;
  auto* synth = app.add_subcommand("synth", "Generate a planted-signal synthetic cohort");
  synth->add_option("--n", ya.n)->capture_default_str();
  synth->add_option("--epilepsy-frac", ya.epilepsy_frac)->capture_default_str();
  synth->add_option("--signal-strength", ya.signal_strength)->capture_default_str();
  synth->add_option("--cue-noise", ya.cue_noise)->capture_default_str();
  synth->add_option("--seed", ya.seed);
  synth->add_flag("--hard", ya.hard, "Weak, noisy preset used by the sweeps");
  synth->add_option("--out", ya.out);
  with_config(synth);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a classifier");
  train->add_option("--cohort", ta.cohort)->required();
  train->add_option("--format", ta.format);
  train->add_option("--split", ta.split, "split.json from the split command")->required();
  train->add_option("--mode", ta.mode, "full, lora or qlora")->capture_default_str();
  train->add_option("--optimizer", ta.optimizer, "adam or sgd")->capture_default_str();
  train->add_option("--checkpoint-rule", ta.checkpoint_rule, "final or best_val_auc")->capture_default_str();
  train->add_option("--epochs", ta.epochs)->capture_default_str();
  train->add_option("--batch-size", ta.batch_size)->capture_default_str();
  train->add_option("--lr", ta.lr, "Peak learning rate")->capture_default_str();
  train->add_option("--warmup", ta.warmup, "Warmup fraction of all steps")->capture_default_str();
  train->add_option("--embed-dim", ta.embed_dim)->capture_default_str();
  train->add_option("--hidden-dim", ta.hidden_dim)->capture_default_str();
  train->add_option("--seed", ta.seed);
  train->add_flag("--no-pretrain", ta.no_pretrain, "Keep random embeddings");
  train->add_option("--out", ta.out);
  with_config(train);

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "Evaluate a trained model with bootstrap CIs");
  evalc->add_option("--model", ea.model_dir, "Train run directory")->required();
  evalc->add_option("--cohort", ea.cohort)->required();
  evalc->add_option("--format", ea.format);
  evalc->add_option("--split", ea.split)->required();
  evalc->add_option("--partition", ea.part, "train, val, test or all")->capture_default_str();
  evalc->add_option("--n-boot", ea.n_boot)->capture_default_str();
  evalc->add_option("--threshold", ea.threshold)->capture_default_str();
  evalc->add_option("--seed", ea.seed);
  evalc->add_option("--out", ea.out);
  with_config(evalc);

  ExplainArgs xa;
  auto* expl = app.add_subcommand("explain", "Sentence attributions and category scores");
  expl->add_option("--model", xa.model_dir)->required();
  expl->add_option("--cohort", xa.cohort)->required();
  expl->add_option("--format", xa.format);
  expl->add_option("--split", xa.split);
  expl->add_option("--partition", xa.part)->capture_default_str();
  expl->add_option("--m", xa.m_steps, "Integration steps")->capture_default_str();
  expl->add_option("--k", xa.k, "Top sentences per note")->capture_default_str();
  expl->add_option("--target", xa.target, "Class whose log-probability is attributed")->capture_default_str();
  expl->add_option("--lexicon", xa.lexicon, "Category lexicon JSON (default: built in)");
  expl->add_option("--limit", xa.limit, "Explain at most this many notes (0 = all)");
  expl->add_option("--out", xa.out);
  with_config(expl);

  ExperimentArgs xp;
  auto* exper = app.add_subcommand("experiment", "Robustness sweeps");
  exper->add_option("--kind", xp.kind, "imbalance, ratio or scale")->required();
  exper->add_option("--values", xp.values, "Comma-separated sweep values");
  exper->add_option("--cohort", xp.cohort, "Cohort (default: hard synthetic)");
  exper->add_option("--format", xp.format);
  exper->add_option("--split", xp.split);
  exper->add_option("--n", xp.n, "Synthetic cohort size")->capture_default_str();
  exper->add_option("--epochs", xp.epochs)->capture_default_str();
  exper->add_option("--n-boot", xp.n_boot)->capture_default_str();
  exper->add_option("--jobs", xp.jobs, "Sweep points run concurrently")->capture_default_str();
  exper->add_option("--seed", xp.seed);
  exper->add_flag("--no-pretrain", xp.no_pretrain);
  exper->add_option("--out", xp.out);
  with_config(exper);

  ServeArgs va;
  auto* serve = app.add_subcommand("serve", "Run the clinician review service");
  serve->add_option("--host", va.host)->capture_default_str();
  serve->add_option("--port", va.port, "0 picks a free port")->capture_default_str();
  serve->add_option("--log", va.log, "Event log (default: <run dir>/events.jsonl)");
  serve->add_option("--cohort", va.cohorts, "Cohort JSONL to register (repeatable)");
  serve->add_option("--attributions", va.attributions, "Attribution JSONL per cohort");
  serve->add_option("--cohort-id", va.cohort_ids, "Id per cohort (default: file stem)");
  serve->add_option("--out", va.out);
  with_config(serve);

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = merge_config(std::move(args));
    std::vector<const char*> cargs;
    for (const auto& s : args) cargs.push_back(s.c_str());
    try {
      app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 1;
    }
    if (ingest->parsed()) cmd_ingest(ia);
    else if (split->parsed()) cmd_split(sa);
    else if (synth->parsed()) cmd_synth(ya);
    else if (train->parsed()) cmd_train(ta);
    else if (evalc->parsed()) cmd_eval(ea);
    else if (expl->parsed()) cmd_explain(xa);
    else if (exper->parsed()) cmd_experiment(xp);
    else if (serve->parsed()) cmd_serve(va);
    return 0;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
