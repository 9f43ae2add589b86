#include "metanet/metanet.hpp"
#include "metanet/http.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace metanet;

namespace {

struct Common {
  std::string gold;
  std::string embeddings;
  std::uint64_t seed = 0;
  std::optional<std::size_t> max_words;
};

struct NetOptions {
  std::size_t width = 500;
  double dropout = 0.5;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 500;
  std::size_t patience = 10;
  double min_delta = 1e-4;
};

void add_common(CLI::App* cmd, Common& c, bool need_gold) {
  auto* e = cmd->add_option("--embeddings", c.embeddings, "word2vec binary embedding file")->check(CLI::ExistingFile);
  e->required();
  auto* g = cmd->add_option("--gold", c.gold, "gold-standard CSV")->check(CLI::ExistingFile);
  if (need_gold) g->required();
  cmd->add_option("--seed", c.seed, "base seed for splits, initialization and training");
  cmd->add_option("--max-words", c.max_words, "load at most this many embedding entries");
}

void add_net_options(CLI::App* cmd, NetOptions& n) {
  cmd->add_option("--width", n.width, "hidden layer width")->capture_default_str();
  cmd->add_option("--dropout", n.dropout, "dropout rate on hidden activations")->capture_default_str();
  cmd->add_option("--momentum", n.momentum, "SGD momentum")->capture_default_str();
  cmd->add_option("--batch-size", n.batch_size, "mini-batch size")->capture_default_str();
  cmd->add_option("--max-epochs", n.max_epochs, "epoch cap")->capture_default_str();
  cmd->add_option("--patience", n.patience, "early-stopping patience in epochs")->capture_default_str();
  cmd->add_option("--min-delta", n.min_delta, "minimum validation-loss improvement")->capture_default_str();
}

EmbeddingTable load_embeddings(const Common& c) {
  std::ifstream in(c.embeddings, std::ios::binary);
  if (!in) throw IoError("cannot open " + c.embeddings);
  auto table = load_word2vec(in, c.max_words);
  if (table.skipped_tokens() > 0) {
    std::cerr << "warning: skipped " << table.skipped_tokens() << " non-UTF-8 tokens\n";
  }
  return table;
}

std::vector<GoldRecord> load_gold(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_gold_csv(in);
}

ModelConfig model_config(const EmbeddingTable& table, const NetOptions& n, std::size_t layers) {
  ModelConfig mc;
  mc.input_dim = kWindowSize * table.dim();
  mc.hidden_layers = layers;
  mc.hidden_width = n.width;
  mc.dropout_rate = n.dropout;
  return mc;
}

TrainConfig train_config(const NetOptions& n, double lr) {
  TrainConfig tc;
  tc.learning_rate = lr;
  tc.momentum = n.momentum;
  tc.batch_size = n.batch_size;
  tc.max_epochs = n.max_epochs;
  tc.patience = n.patience;
  tc.min_delta = n.min_delta;
  return tc;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metaphorical-violence classifier: training, sweeps and the annotation service"};
  app.require_subcommand(1);

  Common common;
  NetOptions net_opts;

  // sweep
  auto* sweep = app.add_subcommand("sweep", "hyperparameter sweep over layers x learning rates");
  add_common(sweep, common, true);
  add_net_options(sweep, net_opts);
  std::vector<std::size_t> layers{1, 2, 4};
  std::vector<double> lrs{0.01, 0.1};
  std::size_t trials = 5, workers = 1;
  std::string out_path, format = "markdown";
  sweep->add_option("--layers", layers, "hidden layer counts")->delimiter(',')->capture_default_str();
  sweep->add_option("--lrs", lrs, "learning rates")->delimiter(',')->capture_default_str();
  sweep->add_option("--trials", trials, "trials per cell")->capture_default_str();
  sweep->add_option("--workers", workers, "parallel trial workers")->capture_default_str();
  sweep->add_option("--out", out_path, "report path (stdout when omitted)");
  sweep->add_option("--format", format, "markdown or csv")->check(CLI::IsMember({"markdown", "csv"}));

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model on the gold split");
  add_common(train_cmd, common, true);
  add_net_options(train_cmd, net_opts);
  std::size_t train_layers = 4;
  double train_lr = 0.01;
  std::string model_out;
  train_cmd->add_option("--layers", train_layers, "hidden layers")->capture_default_str();
  train_cmd->add_option("--lr", train_lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--out", model_out, "model file to write")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved model on the held-out test split");
  add_common(eval_cmd, common, true);
  std::string model_in, group_by;
  eval_cmd->add_option("--model", model_in, "model file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--group-by", group_by, "violent_word or network")
      ->check(CLI::IsMember({"violent_word", "network"}));

  // suggest
  auto* suggest_cmd = app.add_subcommand("suggest", "suggest labels for violent-word occurrences in text");
  add_common(suggest_cmd, common, false);
  std::string text, store_dir;
  double threshold = 0.9;
  suggest_cmd->add_option("--model", model_in, "model file (defaults to the store's active model)");
  suggest_cmd->add_option("--store", store_dir, "service store directory");
  suggest_cmd->add_option("--text", text, "utterance to scan")->required();
  suggest_cmd->add_option("--threshold", threshold, "offer threshold")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "load transcripts and gold annotations into a store");
  std::string transcripts_dir;
  ingest->add_option("--store", store_dir, "store directory")->required();
  ingest->add_option("--transcripts", transcripts_dir, "directory of <network>_<show>_<date>.txt files")
      ->check(CLI::ExistingDirectory);
  ingest->add_option("--gold", common.gold, "gold CSV imported as human annotations")->check(CLI::ExistingFile);

  // serve
  auto* serve = app.add_subcommand("serve", "run the suggestion/annotation HTTP service");
  add_common(serve, common, false);
  add_net_options(serve, net_opts);
  std::string host = "127.0.0.1", ui_dir;
  int port = 8080;
  std::size_t serve_layers = 1;
  double serve_lr = 0.01;
  serve->add_option("--store", store_dir, "store directory")->required();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--threshold", threshold, "offer threshold")->capture_default_str();
  serve->add_option("--layers", serve_layers, "hidden layers for retraining")->capture_default_str();
  serve->add_option("--lr", serve_lr, "learning rate for retraining")->capture_default_str();
  serve->add_option("--ui", ui_dir, "static UI directory")->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sweep) {
      const auto table = load_embeddings(common);
      const auto examples = build_examples(load_gold(common.gold), table);
      const auto splits = split_dataset(examples, common.seed);
      std::cerr << "examples: " << examples.size() << " (train " << splits.train.size() << ", validation "
                << splits.validation.size() << ", test " << splits.test.size() << ")\n";
      SweepGrid grid{layers, lrs, trials, common.seed};
      const auto result = run_sweep(splits, grid, model_config(table, net_opts, 1), train_config(net_opts, 0.01),
                                    workers, [](const TrialRecord& t) {
                                      std::cerr << "layers=" << t.layers << " lr=" << t.learning_rate
                                                << " trial=" << t.trial << " epochs=" << t.epochs << " "
                                                << (t.error ? "error: " + *t.error : std::string(to_string(t.stop_reason)))
                                                << " auc=" << (t.metrics.auc ? std::to_string(*t.metrics.auc) : "n/a")
                                                << "\n";
                                    });
      const auto fmt = format == "csv" ? ReportFormat::kCsv : ReportFormat::kMarkdown;
      if (out_path.empty()) {
        emit_report(aggregate(result), fmt, std::cout);
      } else {
        std::ofstream out(out_path, std::ios::binary);
        emit_report(aggregate(result), fmt, out);
        std::cerr << "wrote " << out_path << "\n";
      }
    } else if (*train_cmd) {
      const auto table = load_embeddings(common);
      const auto splits = split_dataset(build_examples(load_gold(common.gold), table), common.seed);
      auto mc = model_config(table, net_opts, train_layers);
      mc.init_seed = common.seed;
      auto tc = train_config(net_opts, train_lr);
      tc.train_seed = common.seed;
      const auto balanced = balance_by_resampling(splits.train, common.seed);
      const auto result = train(init_network<float>(mc), std::span(balanced), std::span(splits.validation), tc);
      std::ofstream out(model_out, std::ios::binary);
      save_model(result.network, out);
      const auto scores = predict_batch(result.network, std::span(splits.test));
      print_json({{"stop_reason", to_string(result.history.stop_reason)},
                  {"epochs", result.history.epochs.size()},
                  {"best_epoch", result.history.best_epoch},
                  {"test", to_json(evaluate(scores, labels_of(splits.test)))},
                  {"model", model_out}});
    } else if (*eval_cmd) {
      const auto table = load_embeddings(common);
      const auto splits = split_dataset(build_examples(load_gold(common.gold), table), common.seed);
      std::ifstream in(model_in, std::ios::binary);
      const auto net = load_model(in);
      const auto scores = predict_batch(net, std::span(splits.test));
      const auto labels = labels_of(splits.test);
      nlohmann::json out = {{"test", to_json(evaluate(scores, labels))}};
      if (!group_by.empty()) {
        std::vector<std::string> keys;
        for (const auto& e : splits.test) keys.push_back(group_by == "network" ? e.network : e.violent_word);
        nlohmann::json groups;
        for (const auto& [k, m] : evaluate_subsets(scores, labels, keys)) groups[k] = to_json(m);
        out["groups"] = groups;
      }
      print_json(out);
    } else if (*suggest_cmd) {
      const auto table = load_embeddings(common);
      Network net;
      std::uint64_t version = 0;
      if (!model_in.empty()) {
        std::ifstream in(model_in, std::ios::binary);
        net = load_model(in);
      } else if (!store_dir.empty()) {
        ModelRegistry registry(fs::path(store_dir) / "models");
        auto active = registry.active();
        if (!active) throw ConflictError("cold start: store has no active model");
        net = active->network;
        version = active->info.version;
      } else {
        throw ValidationError("suggest needs --model or --store");
      }
      const auto tokens = tokenize(text);
      for (const auto& c : extract_candidates(tokens)) {
        const auto s = make_suggestion(predict(net, featurize(build_window(tokens, c.index), table)), threshold, version,
                                       std::to_string(c.index));
        auto j = to_json(s);
        j["token"] = tokens[c.index];
        std::cout << j.dump() << "\n";
      }
    } else if (*ingest) {
      AnnotationStore store(store_dir);
      std::size_t added = 0;
      if (!transcripts_dir.empty()) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(transcripts_dir)) {
          if (entry.path().extension() == ".txt") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
          const auto meta = parse_transcript_name(f);
          std::vector<Candidate> cands;
          for (const auto& inst : ingest_transcript(f)) cands.push_back(candidate_from_instance(inst, meta));
          added += store.add_candidates(cands);
        }
      }
      std::size_t annotated = 0;
      if (!common.gold.empty()) {
        const auto records = load_gold(common.gold);
        std::vector<Candidate> cands;
        for (const auto& r : records) cands.push_back(candidate_from_gold(r));
        added += store.add_candidates(cands);
        for (const auto& r : records) {
          if (store.latest(r.id)) continue;
          store.record({0, r.id, r.label ? 1 : 0, r.subject, r.object, "gold", "", AnnotationSource::kHuman});
          ++annotated;
        }
        store.snapshot();
      }
      print_json({{"candidates_added", added}, {"annotations_added", annotated},
                  {"pending", store.pending_count()}, {"candidates", store.candidate_count()}});
    } else if (*serve) {
      const auto table = load_embeddings(common);
      AnnotationStore store(store_dir);
      ModelRegistry registry(fs::path(store_dir) / "models");
      ServiceConfig cfg;
      cfg.offer_threshold = threshold;
      cfg.model = model_config(table, net_opts, serve_layers);
      cfg.training = train_config(net_opts, serve_lr);
      cfg.base_seed = common.seed;
      SuggestionService service(store, registry, table, cfg);
      httplib::Server server;
      mount_api(server, service, ui_dir);
      std::cerr << "listening on http://" << host << ":" << port << "\n";
      if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
