#include "nexus/evaluation.hpp"
#include "nexus/http_service.hpp"
#include "nexus/retrieval.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace nexus;

namespace {

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  if (out.empty()) throw std::invalid_argument("no ratios given");
  return out;
}

std::string join(const Tokens& t) {
  std::string s;
  for (const auto& w : t) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

std::vector<DialogueFlow> load_flows(const std::string& path, const Vocabulary& vocab) {
  return encode_dialogues(parse_corpus_file(path).dialogues, vocab);
}

struct DecodeOptions {
  std::string mode = "greedy";
  int beam = 5;
  double temperature = 1.0;
  int samples = 1;
  int max_len = 30;

  void add(CLI::App* app) {
    app->add_option("--mode", mode, "greedy, beam or sample")->capture_default_str();
    app->add_option("--beam", beam, "beam size")->capture_default_str();
    app->add_option("--temperature", temperature, "sampling temperature")->capture_default_str();
    app->add_option("--samples", samples, "prior samples per reply")->capture_default_str();
    app->add_option("--max-len", max_len, "maximum reply length")->capture_default_str();
  }
  DecodeSettings settings() const {
    DecodeSettings s;
    s.mode = parse_decode_mode(mode);
    s.beam_size = beam;
    s.temperature = temperature;
    s.n_prior_samples = samples;
    s.max_len = max_len;
    s.validate();
    return s;
  }
};

int run_train(const std::string& config_path, const std::string& corpus, const std::string& out,
              bool with_backward, bool with_vectors) {
  const TrainConfig config = config_path.empty() ? TrainConfig{} : TrainConfig::load_file(config_path);
  const CorpusRun run = train_on_corpus(config, corpus, out);
  std::cout << "steps " << run.result.steps_run;
  if (run.result.best_valid) {
    std::cout << " best_step " << run.result.best_step << " valid_total " << run.result.best_valid->total;
  }
  if (run.result.diverged) std::cout << " diverged";
  if (run.result.early_stopped) std::cout << " early_stopped";
  std::cout << "\ncheckpoint " << run.checkpoint_dir << '\n';

  if (with_backward || with_vectors) {
    const LoadedCheckpoint ck = load_checkpoint(run.checkpoint_dir);
    const fs::path root(out);
    if (with_backward) {
      const auto train_flows = load_flows((root / "train.txt").string(), ck.vocab);
      const auto valid_flows = load_flows((root / "valid.txt").string(), ck.vocab);
      const auto train = make_instances(train_flows);
      const auto valid = make_instances(valid_flows);
      TrainConfig bc = config;
      bc.model.encoder.vocab_size = static_cast<int>(ck.vocab.size());
      const BackwardModel bw = train_backward_model(bc, train, valid);
      bw.save((root / "backward").string(), ck.vocab);
      std::cout << "backward " << (root / "backward").string() << '\n';
    }
    if (with_vectors) {
      const WordVectors wv = train_skipgram(parse_corpus_file((root / "train.txt").string()).dialogues, {});
      wv.save((root / "vectors.txt").string());
      std::cout << "vectors " << (root / "vectors.txt").string() << '\n';
    }
  }
  return 0;
}

int run_sweep(const std::string& config_path, const std::string& corpus, const std::string& ratios,
              const std::string& out) {
  TrainConfig config = config_path.empty() ? TrainConfig{} : TrainConfig::load_file(config_path);
  ParseOptions opts;
  opts.max_utterance_tokens = config.max_utterance_tokens;
  const auto split = split_corpus(parse_corpus_file(corpus, opts).dialogues, config.seed);
  const Vocabulary vocab = build_vocab(split.train, config.vocab_max_size);
  config.model.encoder.vocab_size = static_cast<int>(vocab.size());
  const auto train_flows = encode_dialogues(split.train, vocab);
  const auto valid_flows = encode_dialogues(split.valid, vocab);
  const auto test_flows = encode_dialogues(split.test, vocab);
  const auto train = make_instances(train_flows);
  const auto valid = make_instances(valid_flows);
  const auto test = make_instances(test_flows);
  const auto rows = sweep_lambda(config, parse_ratios(ratios), train, valid, test.empty() ? valid : test);
  std::cout << sweep_table(rows);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream((fs::path(out) / "sweep.tsv").string()) << sweep_table(rows);
    std::ofstream((fs::path(out) / "sweep.json").string()) << sweep_json(rows) << '\n';
  }
  return 0;
}

std::unique_ptr<BackwardModel> maybe_backward(const std::string& dir, const Vocabulary& vocab) {
  if (dir.empty()) return nullptr;
  return std::make_unique<BackwardModel>(BackwardModel::load(dir, vocab));
}

int run_chat(const std::string& checkpoint, const std::string& backward_dir, std::uint64_t seed,
             const DecodeOptions& decode) {
  const LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const auto backward = maybe_backward(backward_dir, ck.vocab);
  ChatService chat(*ck.model, ck.vocab, seed, backward.get());
  const std::string id = chat.create_session(decode.settings());
  std::cout << "type a message; /simulate N runs a self-conversation; /quit exits\n";
  std::string line;
  while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
    if (line == "/quit") break;
    try {
      if (line.rfind("/simulate", 0) == 0) {
        const int turns = line.size() > 9 ? std::stoi(line.substr(9)) : 5;
        const SimulationResult r = chat.simulate(id, turns);
        for (const auto& t : r.transcript) std::cout << "  model: " << t.text << (t.is_dull ? "  [dull]" : "") << '\n';
        std::cout << "  turns " << r.turn_count << " (" << r.stop_reason << ")\n";
        continue;
      }
      const Turn t = chat.respond(id, line);
      std::cout << "model: " << t.text << (t.is_dull ? "  [dull]" : "");
      if (t.neg_pmi) std::cout << "  neg_pmi " << *t.neg_pmi;
      std::cout << '\n';
    } catch (const std::invalid_argument& e) {
      std::cout << "error: " << e.what() << '\n';
    }
  }
  return 0;
}

int run_serve(const std::string& checkpoint, const std::string& backward_dir, const std::string& host,
              int port, const std::string& static_dir, std::uint64_t seed) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  const LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const auto backward = maybe_backward(backward_dir, ck.vocab);
  ChatService chat(*ck.model, ck.vocab, seed, backward.get());
  HttpService http(chat, static_dir);
  const int bound = http.bind(host, port);
  std::cout << "listening on " << host << ':' << bound << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    std::cout << "shutting down" << std::endl;
    http.stop();
  });
  http.run();
  // run() also returns if the server fails; wake the waiter in that case.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& test_path, const std::string& metrics,
             const std::string& out, const std::string& backward_dir, const std::string& vectors_path,
             const std::string& train_path, const std::string& refs_path, std::uint64_t seed, int resamples,
             const DecodeOptions& decode) {
  const LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const auto test_flows = load_flows(test_path, ck.vocab);
  const auto test = make_instances(test_flows);

  EvalConfig cfg;
  cfg.metrics = parse_metric_list(metrics);
  cfg.decode = decode.settings();
  cfg.seed = seed;
  cfg.bootstrap_resamples = resamples;
  EvalInputs inputs;
  const auto backward = maybe_backward(backward_dir, ck.vocab);
  inputs.backward = backward.get();

  std::optional<WordVectors> vectors;
  std::vector<DialogueFlow> train_flows;
  std::vector<ContextSplit> train;
  std::optional<ParsedCorpus> train_corpus;
  if (!train_path.empty()) {
    train_corpus = parse_corpus_file(train_path);
    train_flows = encode_dialogues(train_corpus->dialogues, ck.vocab);
    train = make_instances(train_flows);
    const std::size_t held = std::max<std::size_t>(2, train.size() / 10);
    if (train.size() > held + 2) {
      inputs.discriminator_train = std::span<const ContextSplit>(train).first(train.size() - held);
      inputs.discriminator_heldout = std::span<const ContextSplit>(train).last(held);
    }
  }
  if (!vectors_path.empty()) {
    vectors = WordVectors::load(vectors_path);
    inputs.vector_source = vectors_path;
  } else if (train_corpus) {
    vectors = train_skipgram(train_corpus->dialogues, {});
    inputs.vector_source = "skip-gram on " + train_path;
  }
  if (vectors) inputs.vectors = &*vectors;

  std::vector<std::vector<Tokens>> refs;
  if (!refs_path.empty()) {
    std::ifstream in(refs_path);
    if (!in) throw std::runtime_error("cannot read " + refs_path);
    std::string line;
    while (std::getline(in, line)) {
      std::vector<Tokens> row;
      std::istringstream cells(line);
      std::string cell;
      while (std::getline(cells, cell, '\t')) {
        if (!cell.empty()) row.push_back(tokenize(cell));
      }
      refs.push_back(std::move(row));
    }
    inputs.references = &refs;
  }

  const MetricReport report = evaluate_system(*ck.model, ck.vocab, test, cfg, inputs);
  std::cout << report.to_text();
  if (!out.empty()) std::ofstream(out) << report.to_json() << '\n';
  return 0;
}

// Splits a query line into context tokens and an optional gold response after a tab.
std::pair<Tokens, std::optional<Tokens>> parse_query(const std::string& line) {
  const auto tab = line.find('\t');
  const std::string ctx = line.substr(0, tab);
  Tokens tokens;
  std::istringstream in(ctx);
  std::string w;
  while (in >> w) tokens.push_back(w == kEouToken ? w : tokenize(w).front());
  std::optional<Tokens> gold;
  if (tab != std::string::npos) gold = tokenize(line.substr(tab + 1));
  return {tokens, gold};
}

int run_retrieve(const std::string& corpus, const std::string& queries, const std::string& out,
                 std::size_t n, double threshold, const std::string& vectors_path) {
  std::optional<WordVectors> vectors;
  if (!vectors_path.empty()) vectors = WordVectors::load(vectors_path);
  const RetrievalIndex index(documents_from_dialogues(parse_corpus_file(corpus).dialogues),
                             vectors ? &*vectors : nullptr);
  std::ifstream in(queries);
  if (!in) throw std::runtime_error("cannot read " + queries);
  std::ofstream dst(out);
  if (!dst) throw std::runtime_error("cannot write " + out);
  ReferenceOptions opts;
  opts.n = n;
  opts.cosine_threshold = threshold;
  std::string line;
  std::size_t count = 0, empty = 0;
  while (std::getline(in, line)) {
    const auto [query, gold] = parse_query(line);
    const auto refs = collect_references(query, index, opts, gold ? &*gold : nullptr);
    for (std::size_t k = 0; k < refs.size(); ++k) dst << (k ? "\t" : "") << join(refs[k]);
    dst << '\n';
    ++count;
    empty += refs.empty();
  }
  std::cout << "queries " << count << " without references " << empty << " threshold " << threshold << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NEXUS dialogue network: training, evaluation and serving"};
  app.require_subcommand(1);

  std::string config, corpus, out, checkpoint, backward, ratios = "0.25,0.5,1,2";
  bool with_backward = false, with_vectors = false;
  auto* train = app.add_subcommand("train", "train a model on a corpus file");
  train->add_option("--config", config, "key = value config file");
  train->add_option("--corpus", corpus, "dialogue corpus")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_flag("--backward", with_backward, "also train the backward scoring model");
  train->add_flag("--vectors", with_vectors, "also train skip-gram word vectors");

  auto* sweep = app.add_subcommand("sweep", "train one model per lambda1/lambda2 ratio");
  sweep->add_option("--config", config, "key = value config file");
  sweep->add_option("--corpus", corpus, "dialogue corpus")->required();
  sweep->add_option("--ratios", ratios, "comma-separated ratios")->capture_default_str();
  sweep->add_option("--out", out, "directory for sweep.tsv and sweep.json");

  std::uint64_t seed = 1;
  DecodeOptions decode;
  auto* chat = app.add_subcommand("chat", "terminal chat with a checkpoint");
  chat->add_option("--checkpoint", checkpoint)->required();
  chat->add_option("--backward", backward, "backward model checkpoint for neg-PMI");
  chat->add_option("--seed", seed)->capture_default_str();
  decode.add(chat);

  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "HTTP chat service");
  serve->add_option("--checkpoint", checkpoint)->required();
  serve->add_option("--backward", backward, "backward model checkpoint for neg-PMI");
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--static", static_dir, "directory served at /");
  serve->add_option("--seed", seed)->capture_default_str();

  std::string test, metrics = "all", vectors, train_corpus, refs;
  int resamples = 1000;
  auto* eval = app.add_subcommand("eval", "automatic metrics on a test corpus");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--test", test, "test corpus")->required();
  eval->add_option("--metrics", metrics, "all or a comma-separated list")->capture_default_str();
  eval->add_option("--out", out, "JSON report path");
  eval->add_option("--backward", backward, "backward model checkpoint");
  eval->add_option("--vectors", vectors, "word vectors in text format");
  eval->add_option("--train", train_corpus, "training corpus for vectors and the discriminator");
  eval->add_option("--refs", refs, "extra references, tab-separated, one line per test instance");
  eval->add_option("--seed", seed)->capture_default_str();
  eval->add_option("--resamples", resamples, "bootstrap resamples")->capture_default_str();
  decode.add(eval);

  std::string queries;
  std::size_t n_refs = 10;
  double threshold = 0.4;
  auto* retrieve = app.add_subcommand("retrieve-refs", "multi-reference sets by retrieval");
  retrieve->add_option("--corpus", corpus, "corpus to index")->required();
  retrieve->add_option("--queries", queries, "one context per line, optional tab and gold response")->required();
  retrieve->add_option("--out", out, "output file")->required();
  retrieve->add_option("--n", n_refs)->capture_default_str();
  retrieve->add_option("--threshold", threshold, "minimum tf-idf cosine")->capture_default_str();
  retrieve->add_option("--vectors", vectors, "word vectors for reranking");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return run_train(config, corpus, out, with_backward, with_vectors);
    if (*sweep) return run_sweep(config, corpus, ratios, out);
    if (*chat) return run_chat(checkpoint, backward, seed, decode);
    if (*serve) return run_serve(checkpoint, backward, host, port, static_dir, seed);
    if (*eval) {
      return run_eval(checkpoint, test, metrics, out, backward, vectors, train_corpus, refs, seed, resamples,
                      decode);
    }
    if (*retrieve) return run_retrieve(corpus, queries, out, n_refs, threshold, vectors);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
