#include "wordprobe/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "wordprobe/attn_stats.hpp"
#include "wordprobe/checkpoint.hpp"
#include "wordprobe/corpus.hpp"
#include "wordprobe/csv.hpp"
#include "wordprobe/dumps.hpp"
#include "wordprobe/error.hpp"
#include "wordprobe/finetune.hpp"
#include "wordprobe/mlm.hpp"
#include "wordprobe/probe.hpp"
#include "wordprobe/synthetic.hpp"
#include "wordprobe/traces.hpp"

namespace wordprobe {

namespace {

namespace fs = std::filesystem;

// Flags shared by all subcommands. Per-command defaults for lr, epochs and
// batch apply when the flag is absent.
struct Shared {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t dim = 128;
  std::size_t max_len = 64;
  double lr = 0.0;
  std::size_t epochs = 0;
  std::size_t batch = 0;
  double dropout = 0.1;
  double mask_ratio = 0.15;
  std::uint64_t seed = 42;
  std::string out = "wordprobe_out";
  std::size_t threads = 1;
};

struct Given {
  CLI::Option* lr = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* batch = nullptr;
};

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
  auto out = open_out(path);
  fn(out);
  finish(out, path);
}

double pick(const CLI::Option* opt, double value, double fallback) { return opt->count() > 0 ? value : fallback; }
std::size_t pick(const CLI::Option* opt, std::size_t value, std::size_t fallback) {
  return opt->count() > 0 ? value : fallback;
}

std::vector<TracedSentence> traces_from(const std::string& checkpoint, const std::string& corpus, const std::string& dump,
                                        std::size_t threads) {
  if (!dump.empty()) return read_dump_traces(dump);
  if (checkpoint.empty() || corpus.empty()) {
    throw Error(Errc::invalid_argument, "give either --dump or both --checkpoint and --corpus");
  }
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto sentences = read_corpus(corpus);
  return trace_corpus(ck.model, ck.vocab, sentences, threads);
}

std::pair<std::string, std::string> split_named(const std::string& text, const std::string& flag) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(Errc::invalid_argument, flag + " expects name=value, got " + text);
  return {text.substr(0, eq), text.substr(eq + 1)};
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    parts.push_back(text.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return parts;
}

void cmd_stats(const Shared& s, const std::vector<std::string>& corpora, const std::optional<double>& avg_len,
               std::ostream& log) {
  const fs::path out_dir = s.out;
  if (corpora.empty() && !avg_len) throw Error(Errc::invalid_argument, "stats needs --corpus or --avg-len");
  std::vector<std::pair<std::string, CorpusStats>> rows;
  for (const auto& path : corpora) rows.emplace_back(fs::path(path).filename().string(), corpus_stats(read_corpus(path)));
  if (!corpora.empty()) {
    write_file(out_dir / "stats.csv", [&](std::ostream& o) {
      csv::write_row(o, {"corpus", "sentence_count", "word_count", "char_count", "avg_sentence_length_chars"});
      for (const auto& [name, st] : rows) {
        csv::write_row(o, {name, std::to_string(st.sentence_count), std::to_string(st.word_count),
                           std::to_string(st.char_count), csv::format_fixed(st.avg_sentence_length(), 4)});
      }
    });
  }
  write_file(out_dir / "baseline.csv", [&](std::ostream& o) {
    csv::write_row(o, {"corpus", "avg_sentence_length_chars", "random_baseline", "random_baseline_exact"});
    for (const auto& [name, st] : rows) {
      const double b = random_baseline(st);
      csv::write_row(o, {name, csv::format_fixed(st.avg_sentence_length(), 4), format_baseline(b), csv::format_fixed(b, 6)});
      log << name << ": random baseline " << format_baseline(b) << '\n';
    }
    if (avg_len) {
      const double b = random_baseline(*avg_len);
      csv::write_row(o, {"avg_len", csv::format_fixed(*avg_len, 4), format_baseline(b), csv::format_fixed(b, 6)});
      log << "avg length " << csv::format_fixed(*avg_len, 1) << ": random baseline " << format_baseline(b) << '\n';
    }
  });
}

void cmd_gen_corpus(const Shared& s, std::size_t train, std::size_t dev, std::size_t test, std::ostream& log) {
  SyntheticLanguageConfig lc;
  lc.seed = s.seed;
  const SyntheticLanguage lang = make_language(lc);
  const fs::path dir = s.out;
  fs::create_directories(dir);
  const std::pair<const char*, std::size_t> splits[] = {{"train", train}, {"dev", dev}, {"test", test}};
  std::uint64_t stream = 1;
  for (const auto& [name, count] : splits) {
    const auto corpus = sample_corpus(lang, count, mix_seed(s.seed, stream++));
    write_corpus(dir / (std::string(name) + ".txt"), corpus);
    write_corpus(dir / (std::string("coarse_") + name + ".txt"), coarsen(corpus, lang));
  }
  log << "wrote synthetic corpora to " << dir.string() << '\n';
}

void cmd_train_mlm(const Shared& s, const Given& g, const std::string& corpus_path, std::size_t min_freq,
                   std::ostream& log) {
  const auto corpus = read_corpus(corpus_path);
  const CharVocab vocab = build_vocab(corpus, min_freq);
  ModelConfig cfg{s.layers, s.heads, s.dim, vocab.size(), s.max_len, static_cast<float>(s.dropout), s.seed};
  MlmHyper hyper;
  hyper.lr = pick(g.lr, s.lr, hyper.lr);
  hyper.epochs = pick(g.epochs, s.epochs, hyper.epochs);
  hyper.batch_size = pick(g.batch, s.batch, hyper.batch_size);
  hyper.mask_ratio = s.mask_ratio;
  const MlmTrainResult r = train_mlm(corpus, vocab, cfg, hyper);
  const fs::path dir = s.out;
  save_checkpoint(dir / "checkpoint", r.model, vocab);
  write_file(dir / "mlm_loss.csv", [&](std::ostream& o) {
    csv::write_row(o, {"epoch", "loss", "train_loss"});
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
      csv::write_row(o, {std::to_string(e + 1), csv::format_fixed(r.epoch_loss[e], 6),
                         csv::format_fixed(r.epoch_train_loss[e], 6)});
    }
  });
  const double final_loss = r.epoch_loss.empty() ? r.initial_loss : r.epoch_loss.back();
  log << "vocab " << vocab.size() << ", initial loss " << csv::format_fixed(r.initial_loss, 4) << ", final loss "
      << csv::format_fixed(final_loss, 4) << ", ln V " << csv::format_fixed(std::log(double(vocab.size())), 4) << '\n';
}

void cmd_analyze(const Shared& s, const std::string& checkpoint, const std::string& corpus, const std::string& dump,
                 const std::vector<std::size_t>& matrix, std::ostream& log) {
  const auto traced = traces_from(checkpoint, corpus, dump, s.threads);
  if (traced.empty()) throw Error(Errc::empty_corpus, "no sentences to analyze");
  const HeadStatTable table = aggregate(traced);
  const fs::path dir = s.out;
  write_file(dir / "head_stats.csv", [&](std::ostream& o) { write_head_table_csv(o, table); });
  write_file(dir / "best_heads.csv", [&](std::ostream& o) { write_best_heads_csv(o, best_heads(table)); });
  write_file(dir / "window_curve.csv", [&](std::ostream& o) { write_window_curve_csv(o, window_curve(table)); });
  if (!matrix.empty()) {
    if (matrix.size() != 3) throw Error(Errc::invalid_argument, "--matrix expects layer,head,sentence");
    const std::size_t layer = matrix[0];
    const std::size_t head = matrix[1];
    const std::size_t sent = matrix[2];
    if (sent == 0 || sent > traced.size()) {
      throw Error(Errc::index_out_of_range, "sentence " + std::to_string(sent) + " (have " +
                                                std::to_string(traced.size()) + ")");
    }
    if (layer == 0 || head == 0) throw Error(Errc::index_out_of_range, "layer and head are 1-based");
    const auto& t = traced[sent - 1];
    const AttentionMatrix m = export_matrix(t.trace, layer - 1, head - 1, t.sentence);
    const std::string stem = "matrix_l" + std::to_string(layer) + "_h" + std::to_string(head) + "_s" + std::to_string(sent);
    write_file(dir / (stem + ".csv"), [&](std::ostream& o) { write_matrix_csv(o, m); });
    write_file(dir / (stem + ".svg"), [&](std::ostream& o) { write_matrix_svg(o, m); });
  }
  log << "analyzed " << traced.size() << " sentences over " << table.layers() << " layers x " << table.heads()
      << " heads\n";
}

ProbeConfig probe_config(const Shared& s, const Given& g) {
  ProbeConfig pc;
  pc.lr = pick(g.lr, s.lr, pc.lr);
  pc.epochs = pick(g.epochs, s.epochs, pc.epochs);
  pc.batch_size = pick(g.batch, s.batch, pc.batch_size);
  pc.dropout = s.dropout;
  pc.seed = s.seed;
  return pc;
}

void cmd_probe(const Shared& s, const Given& g, const std::string& checkpoint, const std::vector<std::string>& corpora,
               const std::vector<std::string>& dumps, std::ostream& log) {
  const ProbeConfig pc = probe_config(s, g);
  std::vector<std::vector<TracedSentence>> sets;
  if (!dumps.empty()) {
    if (dumps.size() != 3) throw Error(Errc::invalid_argument, "--dumps expects train,dev,test");
    for (const auto& d : dumps) sets.push_back(read_dump_traces(d));
  } else {
    if (checkpoint.empty() || corpora.size() != 3) {
      throw Error(Errc::invalid_argument, "give --checkpoint with --corpora train,dev,test, or --dumps train,dev,test");
    }
    const Checkpoint ck = load_checkpoint(checkpoint);
    for (const auto& c : corpora) sets.push_back(trace_corpus(ck.model, ck.vocab, read_corpus(c), s.threads));
  }
  const ProbeResult r = layer_sweep(sets[0], sets[1], sets[2], pc, s.threads);
  write_file(fs::path(s.out) / "probe.csv", [&](std::ostream& o) { write_probe_csv(o, r); });
  log << "best layer " << r.best_layer() << " F1 " << csv::format_fixed(r.layers[r.best_layer() - 1].score.f1, 4)
      << ", all-S baseline F1 " << csv::format_fixed(r.baseline_all_s.f1, 4) << '\n';
}

TaskData build_task(const std::string& task, const std::vector<SegmentedSentence>& data, const CharVocab& vocab,
                    std::size_t max_len, std::uint64_t seed) {
  if (task == "boundary") return boundary_tagging_task(data, vocab, max_len);
  if (task == "bag-of-chars") return bag_of_chars_task(data, vocab, max_len);
  if (task == "random") return random_label_task(data, vocab, max_len, 3, seed);
  if (task == "pair") return sentence_pair_task(data, vocab, max_len, seed);
  throw Error(Errc::invalid_argument, "unknown task " + task);
}

void cmd_finetune(const Shared& s, const Given& g, const std::string& checkpoint, const std::string& task,
                  const std::string& data_path, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto data = read_corpus(data_path);
  const TaskData td = build_task(task, data, ck.vocab, ck.model.config().max_len, s.seed);
  FinetuneHyper h;
  h.lr = pick(g.lr, s.lr, h.lr);
  h.epochs = pick(g.epochs, s.epochs, h.epochs);
  h.batch_size = pick(g.batch, s.batch, h.batch_size);
  h.seed = s.seed;
  const FinetuneResult r = finetune(ck.model, td, h);
  const fs::path dir = s.out;
  save_checkpoint(dir / "checkpoint", r.model, ck.vocab);
  write_file(dir / "finetune_loss.csv", [&](std::ostream& o) {
    csv::write_row(o, {"epoch", "train_loss"});
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
      csv::write_row(o, {std::to_string(e + 1), csv::format_fixed(r.epoch_loss[e], 6)});
    }
  });
  write_file(dir / "task_eval.csv", [&](std::ostream& o) {
    csv::write_row(o, {"task", "kind", "initial_loss", "final_loss", "accuracy"});
    csv::write_row(o, {td.spec.name, task_kind_name(td.spec.kind), csv::format_fixed(r.initial_loss, 6),
                       csv::format_fixed(r.final_loss, 6), csv::format_fixed(r.accuracy, 6)});
  });
  log << td.spec.name << ": loss " << csv::format_fixed(r.initial_loss, 4) << " -> " << csv::format_fixed(r.final_loss, 4)
      << ", accuracy " << csv::format_fixed(r.accuracy, 4) << '\n';
}

void cmd_delta_report(const Shared& s, const Given& g, const std::string& base_path,
                      const std::vector<std::string>& finetuned, const std::vector<std::string>& datasets,
                      std::ostream& log) {
  const Checkpoint base = load_checkpoint(base_path);
  std::vector<NamedModel> models;
  for (const auto& spec : finetuned) {
    auto [name, path] = split_named(spec, "--finetuned");
    Checkpoint ck = load_checkpoint(path);
    if (!(ck.vocab == base.vocab)) throw Error(Errc::config_mismatch, path + " uses a different vocabulary");
    models.push_back({name, std::move(ck.model)});
  }
  std::vector<ProbeDataset> sets;
  for (const auto& spec : datasets) {
    auto [name, paths] = split_named(spec, "--dataset");
    const auto parts = split_commas(paths);
    if (parts.size() != 3) throw Error(Errc::invalid_argument, "--dataset expects name=train,dev,test");
    sets.push_back({name, read_corpus(parts[0]), read_corpus(parts[1]), read_corpus(parts[2])});
  }
  const DeltaReport r = probe_after_finetune(base.model, models, base.vocab, sets, probe_config(s, g), s.threads);
  const fs::path dir = s.out;
  write_file(dir / "delta.csv", [&](std::ostream& o) { write_delta_csv(o, r); });
  write_file(dir / "layer_curves.csv", [&](std::ostream& o) { write_layer_curves_csv(o, r); });
  for (const auto& t : r.tasks) {
    log << t.task << ": average delta " << csv::format_fixed(100.0 * t.average_delta, 2) << " points ("
        << direction_name(t.direction) << ")\n";
  }
}

void cmd_dump(const Shared& s, const std::string& checkpoint, const std::string& corpus, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto traced = trace_corpus(ck.model, ck.vocab, read_corpus(corpus), s.threads);
  write_dump(fs::path(s.out) / "dump", traced, ck.vocab);
  log << "dumped " << traced.size() << " sentences\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Word-structure analysis for character-level transformer encoders", "wordprobe"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "key=value file, subcommand keys under [name]; command-line flags win");

  Shared s;
  Given g;
  app.add_option("--layers", s.layers, "encoder layers")->capture_default_str();
  app.add_option("--heads", s.heads, "attention heads per layer")->capture_default_str();
  app.add_option("--dim", s.dim, "hidden width")->capture_default_str();
  app.add_option("--max-len", s.max_len, "maximum sequence length including [CLS]/[SEP]")->capture_default_str();
  g.lr = app.add_option("--lr", s.lr, "learning rate (train-mlm 1e-3, probe/finetune 2e-5)");
  g.epochs = app.add_option("--epochs", s.epochs, "training epochs (train-mlm 5, probe/finetune 3)");
  g.batch = app.add_option("--batch", s.batch, "batch size (train-mlm 16 sentences, probe 8 chars, finetune 8)");
  app.add_option("--dropout", s.dropout, "encoder dropout (train-mlm) or probe input dropout")->capture_default_str();
  app.add_option("--mask-ratio", s.mask_ratio, "MLM masking probability")->capture_default_str();
  app.add_option("--seed", s.seed, "random seed")->capture_default_str();
  app.add_option("--out", s.out, "output directory")->capture_default_str();
  app.add_option("--threads", s.threads, "worker threads (results do not depend on it)")->capture_default_str();

  auto* stats = app.add_subcommand("stats", "corpus statistics and the random attention baseline");
  std::vector<std::string> stat_corpora;
  std::optional<double> avg_len;
  stats->add_option("--corpus", stat_corpora, "segmented corpus file (repeatable)")->check(CLI::ExistingFile);
  stats->add_option("--avg-len", avg_len, "average sentence length to turn into a baseline");

  auto* gen = app.add_subcommand("gen-corpus", "write synthetic train/dev/test corpora in two segmentation standards");
  std::size_t gen_train = 2000, gen_dev = 200, gen_test = 200;
  gen->add_option("--train-size", gen_train)->capture_default_str();
  gen->add_option("--dev-size", gen_dev)->capture_default_str();
  gen->add_option("--test-size", gen_test)->capture_default_str();

  auto* train = app.add_subcommand("train-mlm", "train an encoder with the masked-language-model objective");
  std::string train_corpus;
  std::size_t min_freq = 1;
  train->add_option("--corpus", train_corpus)->required()->check(CLI::ExistingFile);
  train->add_option("--min-freq", min_freq, "minimum character frequency for the vocabulary")->capture_default_str();

  auto* analyze = app.add_subcommand("analyze", "attention statistics per layer, head and pattern");
  std::string an_ckpt, an_corpus, an_dump;
  std::vector<std::size_t> an_matrix;
  analyze->add_option("--checkpoint", an_ckpt)->check(CLI::ExistingDirectory);
  analyze->add_option("--corpus", an_corpus)->check(CLI::ExistingFile);
  analyze->add_option("--dump", an_dump)->check(CLI::ExistingDirectory);
  analyze->add_option("--matrix", an_matrix, "export one matrix: layer,head,sentence (1-based)")->delimiter(',');

  auto* probe = app.add_subcommand("probe", "layer-wise segmentation probing");
  std::string pr_ckpt;
  std::vector<std::string> pr_corpora, pr_dumps;
  probe->add_option("--checkpoint", pr_ckpt)->check(CLI::ExistingDirectory);
  probe->add_option("--corpora", pr_corpora, "train,dev,test corpus files")->delimiter(',')->check(CLI::ExistingFile);
  probe->add_option("--dumps", pr_dumps, "train,dev,test dump directories")->delimiter(',')->check(CLI::ExistingDirectory);

  auto* ft = app.add_subcommand("finetune", "fine-tune a checkpoint on a desk-scale task");
  std::string ft_ckpt, ft_task, ft_data;
  ft->add_option("--checkpoint", ft_ckpt)->required()->check(CLI::ExistingDirectory);
  ft->add_option("--task", ft_task)->required()->check(CLI::IsMember({"boundary", "bag-of-chars", "random", "pair"}));
  ft->add_option("--data", ft_data, "segmented corpus the task labels come from")->required()->check(CLI::ExistingFile);

  auto* delta = app.add_subcommand("delta-report", "probe base and fine-tuned models and report F1 deltas");
  std::string dr_base;
  std::vector<std::string> dr_finetuned, dr_datasets;
  delta->add_option("--base", dr_base)->required()->check(CLI::ExistingDirectory);
  delta->add_option("--finetuned", dr_finetuned, "name=checkpoint_dir (repeatable)");
  delta->add_option("--dataset", dr_datasets, "name=train,dev,test (repeatable)")->required();

  auto* dump = app.add_subcommand("dump", "export traces of a corpus to a dump archive");
  std::string du_ckpt, du_corpus;
  dump->add_option("--checkpoint", du_ckpt)->required()->check(CLI::ExistingDirectory);
  dump->add_option("--corpus", du_corpus)->required()->check(CLI::ExistingFile);

  std::vector<std::string> argv_store = args;
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*stats) cmd_stats(s, stat_corpora, avg_len, out);
    if (*gen) cmd_gen_corpus(s, gen_train, gen_dev, gen_test, out);
    if (*train) cmd_train_mlm(s, g, train_corpus, min_freq, out);
    if (*analyze) cmd_analyze(s, an_ckpt, an_corpus, an_dump, an_matrix, out);
    if (*probe) cmd_probe(s, g, pr_ckpt, pr_corpora, pr_dumps, out);
    if (*ft) cmd_finetune(s, g, ft_ckpt, ft_task, ft_data, out);
    if (*delta) cmd_delta_report(s, g, dr_base, dr_finetuned, dr_datasets, out);
    if (*dump) cmd_dump(s, du_ckpt, du_corpus, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace wordprobe
