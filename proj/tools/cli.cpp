#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ctcnat/bench.hpp"
#include "ctcnat/decoding.hpp"
#include "ctcnat/errors.hpp"
#include "ctcnat/evaluation.hpp"

namespace ctcnat::cli {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T v{};
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || end != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return v;
}

std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

// Field accessors keyed by config name, in serialization order.
struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number_field(std::string key, T RunConfig::*member) {
  return Field{key,
               [key, member](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
               [member](const RunConfig& c) {
                 if constexpr (std::is_floating_point_v<T>) {
                   return format_real(c.*member);
                 } else {
                   return std::to_string(c.*member);
                 }
               }};
}

Field path_field(std::string key, std::filesystem::path RunConfig::*member) {
  return Field{key, [member](RunConfig& c, const std::string& v) { c.*member = v; },
               [member](const RunConfig& c) { return (c.*member).string(); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(Field{"variant",
                      [](RunConfig& c, const std::string& v) {
                        try {
                          c.variant = parse_variant(v);
                        } catch (const Error& e) {
                          throw ConfigError(std::string("config key 'variant': ") + e.what());
                        }
                      },
                      [](const RunConfig& c) { return std::string(variant_name(c.variant)); }});
    f.push_back(number_field("d_model", &RunConfig::d_model));
    f.push_back(number_field("ff_dim", &RunConfig::ff_dim));
    f.push_back(number_field("heads", &RunConfig::heads));
    f.push_back(number_field("enc_layers", &RunConfig::enc_layers));
    f.push_back(number_field("dec_layers", &RunConfig::dec_layers));
    f.push_back(number_field("k", &RunConfig::k));
    f.push_back(number_field("max_len", &RunConfig::max_len));
    f.push_back(number_field("dropout", &RunConfig::dropout));
    f.push_back(Field{"vocab_mode",
                      [](RunConfig& c, const std::string& v) {
                        try {
                          c.vocab_mode = parse_token_mode(v);
                        } catch (const Error& e) {
                          throw ConfigError(std::string("config key 'vocab_mode': ") + e.what());
                        }
                      },
                      [](const RunConfig& c) { return std::string(token_mode_name(c.vocab_mode)); }});
    f.push_back(number_field("min_freq", &RunConfig::min_freq));
    f.push_back(number_field("lr", &RunConfig::lr));
    f.push_back(number_field("warmup", &RunConfig::warmup));
    f.push_back(number_field("batch_size", &RunConfig::batch_size));
    f.push_back(number_field("max_steps", &RunConfig::max_steps));
    f.push_back(number_field("valid_interval", &RunConfig::valid_interval));
    f.push_back(number_field("keep_top", &RunConfig::keep_top));
    f.push_back(number_field("seed", &RunConfig::seed));
    f.push_back(path_field("train_src", &RunConfig::train_src));
    f.push_back(path_field("train_tgt", &RunConfig::train_tgt));
    f.push_back(path_field("valid_src", &RunConfig::valid_src));
    f.push_back(path_field("valid_tgt", &RunConfig::valid_tgt));
    f.push_back(path_field("checkpoint_dir", &RunConfig::checkpoint_dir));
    return f;
  }();
  return all;
}

}  // namespace

ModelConfig RunConfig::model_config(std::size_t vocab_size) const {
  ModelConfig c;
  c.variant = variant;
  c.d_model = d_model;
  c.ff_dim = ff_dim;
  c.heads = heads;
  c.enc_layers = enc_layers;
  c.dec_layers = dec_layers;
  c.k = k;
  c.vocab_size = vocab_size;
  c.max_len = max_len;
  c.dropout_rate = dropout;
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = lr;
  t.warmup = warmup;
  t.batch_size = batch_size;
  t.max_steps = max_steps;
  t.validation_interval = valid_interval;
  t.checkpoint_dir = checkpoint_dir;
  t.seed = seed;
  t.keep_top = keep_top;
  return t;
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line = trim(text.substr(start, nl - start));
    start = nl + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not key=value: " + line);
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto& all = fields();
    auto it = std::find_if(all.begin(), all.end(), [&key](const Field& f) { return f.key == key; });
    if (it == all.end()) throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(line_no));
    if (auto [pos, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ConfigError("config key '" + key + "' repeated on line " + std::to_string(line_no) +
                        " (first on line " + std::to_string(pos->second) + ")");
    }
    it->set(config, value);
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string serialize_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(config) + "\n";
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void write_lines_file(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw InputError("write to " + path.string() + " failed");
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

const Vocabulary& require_vocab(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (!ckpt.vocab) throw CheckpointError("checkpoint " + path.string() + " carries no vocabulary");
  return *ckpt.vocab;
}

void require_key(const std::filesystem::path& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("config key '") + key + "' must be set");
}

int cmd_train(const std::filesystem::path& config_path, std::size_t threads, std::ostream& out) {
  const RunConfig rc = load_run_config(config_path);
  require_key(rc.train_src, "train_src");
  require_key(rc.train_tgt, "train_tgt");
  require_key(rc.checkpoint_dir, "checkpoint_dir");
  if (rc.valid_src.empty() != rc.valid_tgt.empty()) {
    throw ConfigError("config keys 'valid_src' and 'valid_tgt' must be set together");
  }

  const auto src_lines = read_lines(rc.train_src);
  const auto tgt_lines = read_lines(rc.train_tgt);
  std::vector<std::string> all_lines = src_lines;
  all_lines.insert(all_lines.end(), tgt_lines.begin(), tgt_lines.end());
  const Vocabulary vocab = Vocabulary::build(all_lines, rc.vocab_mode, rc.min_freq);

  const ModelConfig model = rc.model_config(vocab.size());
  model.validate();
  TrainConfig tc = rc.train_config();
  tc.threads = threads;
  tc.validate();

  const ParallelCorpus train_corpus = make_parallel(src_lines, tgt_lines, vocab, rc.max_len);
  ParallelCorpus valid_corpus;
  if (!rc.valid_src.empty()) valid_corpus = load_parallel(rc.valid_src, rc.valid_tgt, vocab, rc.max_len);

  const TrainResult result = train(model, train_corpus.pairs, valid_corpus.pairs, vocab, tc);
  out << "trained " << variant_name(model.variant) << " for " << tc.max_steps << " steps on "
      << train_corpus.pairs.size() - result.skipped_infeasible << " pairs";
  if (result.skipped_infeasible) out << " (" << result.skipped_infeasible << " infeasible skipped)";
  out << "\nfinal checkpoint: " << (tc.checkpoint_dir / "final.ckpt").string() << '\n';
  for (const auto& r : result.retained) {
    out << "retained step " << r.step << " valid_bleu " << std::fixed << std::setprecision(2) << r.valid_score << ' '
        << r.path.string() << '\n';
    out.unsetf(std::ios::floatfield);
  }
  return 0;
}

int cmd_translate(const std::filesystem::path& model_path, const std::filesystem::path& input,
                  const std::filesystem::path& output, const std::string& mode_name, std::size_t beam) {
  const SearchMode mode = parse_search_mode(mode_name);
  DecodeOptions opts;
  opts.beam_width = beam;
  opts.validate();
  const Checkpoint ckpt = load_checkpoint(model_path);
  const Vocabulary& vocab = require_vocab(ckpt, model_path);
  const auto lines = read_lines(input);
  std::vector<std::string> translations;
  translations.reserve(lines.size());
  for (const auto& line : lines) {
    const auto ids = vocab.encode(line);
    if (ids.empty()) {
      translations.emplace_back();
      continue;
    }
    translations.push_back(vocab.decode(decode_sentence(ckpt.config, ckpt.params, ids, mode, opts).tokens));
  }
  write_lines_file(output, translations);
  return 0;
}

int cmd_evaluate_files(const std::filesystem::path& hyp_path, const std::filesystem::path& ref_path,
                       std::ostream& out) {
  const auto hyp_lines = read_lines(hyp_path);
  const auto ref_lines = read_lines(ref_path);
  if (hyp_lines.size() != ref_lines.size()) {
    throw CorpusError("hypothesis and reference line counts differ: " + std::to_string(hyp_lines.size()) + " vs " +
                      std::to_string(ref_lines.size()));
  }
  std::vector<TokenSequence> hyps, refs;
  for (std::size_t i = 0; i < hyp_lines.size(); ++i) {
    hyps.push_back(split_tokens(hyp_lines[i], TokenMode::kWord));
    refs.push_back(split_tokens(ref_lines[i], TokenMode::kWord));
  }
  out << "# corpus_bleu=" << std::fixed << std::setprecision(6) << corpus_bleu(hyps, refs) << '\n';
  out.unsetf(std::ios::floatfield);
  return 0;
}

int cmd_evaluate_model(const std::filesystem::path& model_path, const std::filesystem::path& src_path,
                       const std::filesystem::path& ref_path, const std::string& mode_name, std::size_t beam,
                       const std::filesystem::path& report_path, const std::filesystem::path& output_path,
                       std::ostream& out) {
  const SearchMode mode = parse_search_mode(mode_name);
  DecodeOptions opts;
  opts.beam_width = beam;
  opts.validate();
  const Checkpoint ckpt = load_checkpoint(model_path);
  const Vocabulary& vocab = require_vocab(ckpt, model_path);
  const ParallelCorpus corpus = load_parallel(src_path, ref_path, vocab, ckpt.config.max_len);
  if (corpus.pairs.empty()) throw CorpusError("no usable sentence pairs in " + src_path.string());
  const EvalReport report = analyze(ckpt.config, ckpt.params, vocab, corpus.pairs, mode, opts);
  if (report_path.empty()) {
    write_report_csv(report, out);
  } else {
    auto f = open_output(report_path);
    write_report_csv(report, f);
    out << "# corpus_bleu=" << std::fixed << std::setprecision(6) << report.corpus_bleu << '\n';
    out.unsetf(std::ios::floatfield);
  }
  if (!output_path.empty()) write_lines_file(output_path, report.outputs);
  return 0;
}

struct BenchArgs {
  std::filesystem::path ar_model;
  std::filesystem::path nar_model;
  std::filesystem::path src;
  std::filesystem::path ref;
  std::vector<std::string> modes;
  std::size_t reps = 5;
  std::size_t beam = DecodeOptions{}.beam_width;
  bool force_ar_length = false;
  std::filesystem::path csv;
  std::filesystem::path summary;
};

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  if (a.ar_model.empty() && a.nar_model.empty()) throw OptionError("bench needs --ar-model and/or --nar-model");
  std::optional<Checkpoint> ar, nar;
  if (!a.ar_model.empty()) ar = load_checkpoint(a.ar_model);
  if (!a.nar_model.empty()) nar = load_checkpoint(a.nar_model);
  const Checkpoint& first = ar ? *ar : *nar;
  const Vocabulary& vocab = require_vocab(first, ar ? a.ar_model : a.nar_model);
  if (ar && nar && nar->vocab && !(*nar->vocab == vocab)) {
    throw ConfigError("AR and NAR checkpoints carry different vocabularies");
  }

  std::vector<BenchMode> modes;
  if (a.modes.empty()) {
    if (ar) modes.insert(modes.end(), {BenchMode::kArGreedy, BenchMode::kArBeam});
    if (nar) modes.insert(modes.end(), {BenchMode::kNarGreedy, BenchMode::kNarBeam});
  } else {
    for (const auto& m : a.modes) modes.push_back(parse_bench_mode(m));
  }

  const auto src_lines = read_lines(a.src);
  const auto ref_lines = a.ref.empty() ? src_lines : read_lines(a.ref);
  const ParallelCorpus corpus = make_parallel(src_lines, ref_lines, vocab, first.config.max_len);

  BenchOptions opts;
  opts.repetitions = a.reps;
  opts.decode.beam_width = a.beam;
  opts.force_ar_length = a.force_ar_length;
  std::optional<BenchModel> ar_model, nar_model;
  if (ar) ar_model = BenchModel{&ar->config, &ar->params};
  if (nar) nar_model = BenchModel{&nar->config, &nar->params};
  const auto records = bench_decode(ar_model, nar_model, corpus.pairs, modes, opts);
  const BenchSummary summary = summarize(records);

  if (a.csv.empty()) {
    write_timing_csv(records, out);
  } else {
    auto f = open_output(a.csv);
    write_timing_csv(records, f);
  }
  if (!a.summary.empty()) {
    auto f = open_output(a.summary);
    write_summary(summary, f);
  } else {
    write_summary(summary, a.csv.empty() ? err : out);
  }
  return 0;
}

int cmd_average(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& output,
                std::ostream& out) {
  std::vector<Checkpoint> ckpts;
  for (const auto& p : inputs) ckpts.push_back(load_checkpoint(p));
  for (std::size_t i = 1; i < ckpts.size(); ++i) {
    if (ckpts[i].vocab != ckpts[0].vocab) {
      throw CheckpointError("checkpoint " + inputs[i].string() + " carries a different vocabulary");
    }
  }
  Checkpoint avg;
  avg.config = ckpts.front().config;
  avg.params = average_checkpoints(ckpts);
  avg.vocab = ckpts.front().vocab;
  // Metadata: latest step, running mean of the source scores.
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    avg.step = std::max(avg.step, ckpts[i].step);
    avg.valid_score += (ckpts[i].valid_score - avg.valid_score) / static_cast<double>(i + 1);
  }
  save_checkpoint(avg, output);
  out << "averaged " << ckpts.size() << " checkpoints into " << output.string() << '\n';
  return 0;
}

struct SynthArgs {
  std::string task = "copy";
  std::size_t symbols = 20;
  std::size_t count = 2000;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  std::uint64_t seed = 1;
  std::filesystem::path src_out;
  std::filesystem::path tgt_out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const SyntheticTask task = parse_synthetic_task(a.task);
  const auto pairs = gen_synthetic(task, a.symbols, a.count, a.min_len, a.max_len, a.seed);
  std::vector<std::string> src, tgt;
  for (const auto& p : pairs) {
    src.push_back(p.source_text);
    tgt.push_back(p.target_text);
  }
  write_lines_file(a.src_out, src);
  write_lines_file(a.tgt_out, tgt);
  out << "wrote " << pairs.size() << " " << synthetic_task_name(task) << " pairs\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Non-autoregressive translation with CTC: training, decoding, evaluation and timing", "ctcnat"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::filesystem::path config_path;
  std::size_t threads = 1;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a key=value config file");
  train_cmd->add_option("--config", config_path, "Run configuration file")->required();
  train_cmd->add_option("--threads", threads, "Sentences processed in parallel per step")->check(CLI::PositiveNumber);

  std::filesystem::path model, input, output;
  std::string mode = "greedy";
  std::size_t beam = DecodeOptions{}.beam_width;
  auto* translate_cmd = app.add_subcommand("translate", "Decode one output line per input line");
  translate_cmd->add_option("--model", model, "Checkpoint file")->required();
  translate_cmd->add_option("--input", input, "Source text, one sentence per line")->required();
  translate_cmd->add_option("--output", output, "Where to write translations")->required();
  translate_cmd->add_option("--mode", mode, "greedy or beam")->capture_default_str();
  translate_cmd->add_option("--beam", beam, "Beam width")->capture_default_str();

  std::filesystem::path hyp, src, ref, report, eval_output;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Corpus BLEU of a model (--model --src --ref) or of files (--hyp --ref)");
  evaluate_cmd->add_option("--model", model, "Checkpoint to decode with");
  evaluate_cmd->add_option("--src", src, "Source sentences (with --model)");
  evaluate_cmd->add_option("--hyp", hyp, "Hypothesis file scored against --ref");
  evaluate_cmd->add_option("--ref", ref, "Reference sentences")->required();
  evaluate_cmd->add_option("--mode", mode, "greedy or beam")->capture_default_str();
  evaluate_cmd->add_option("--beam", beam, "Beam width")->capture_default_str();
  evaluate_cmd->add_option("--report", report, "Write the per-sentence CSV report here instead of stdout");
  evaluate_cmd->add_option("--output", eval_output, "Also write the decoded sentences here");

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "Per-sentence decoding latency, CSV plus summary");
  bench_cmd->add_option("--ar-model", bench_args.ar_model, "Autoregressive baseline checkpoint");
  bench_cmd->add_option("--nar-model", bench_args.nar_model, "Non-autoregressive checkpoint");
  bench_cmd->add_option("--src", bench_args.src, "Source sentences")->required();
  bench_cmd->add_option("--ref", bench_args.ref, "Reference sentences (length buckets, forced AR length)");
  bench_cmd->add_option("--modes", bench_args.modes, "Subset of AR-greedy AR-beam NAR-greedy NAR-beam");
  bench_cmd->add_option("--reps", bench_args.reps, "Timed repetitions per sentence (median reported)")
      ->capture_default_str();
  bench_cmd->add_option("--beam", bench_args.beam, "Beam width for beam modes")->capture_default_str();
  bench_cmd->add_flag("--force-ar-length", bench_args.force_ar_length,
                      "AR greedy decodes exactly the reference length");
  bench_cmd->add_option("--csv", bench_args.csv, "Timing CSV path (default stdout)");
  bench_cmd->add_option("--summary", bench_args.summary, "Summary path (default stdout, stderr if CSV is on stdout)");

  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path average_output;
  auto* average_cmd = app.add_subcommand("average", "Element-wise mean of checkpoint parameters");
  average_cmd->add_option("--checkpoints", checkpoints, "Checkpoints sharing one configuration")->required();
  average_cmd->add_option("--output", average_output, "Averaged checkpoint path")->required();

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic parallel corpus");
  synth_cmd->add_option("--task", synth.task, "copy, reverse or duplicate")->capture_default_str();
  synth_cmd->add_option("--symbols", synth.symbols, "Alphabet size")->capture_default_str();
  synth_cmd->add_option("--count", synth.count, "Number of pairs")->capture_default_str();
  synth_cmd->add_option("--min-len", synth.min_len, "Shortest source")->capture_default_str();
  synth_cmd->add_option("--max-len", synth.max_len, "Longest source")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--src-out", synth.src_out, "Source output file")->required();
  synth_cmd->add_option("--tgt-out", synth.tgt_out, "Target output file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(config_path, threads, out);
    if (*translate_cmd) return cmd_translate(model, input, output, mode, beam);
    if (*evaluate_cmd) {
      if (!hyp.empty()) {
        if (!model.empty()) throw OptionError("use either --hyp or --model, not both");
        return cmd_evaluate_files(hyp, ref, out);
      }
      if (model.empty() || src.empty()) throw OptionError("evaluate needs --hyp, or --model with --src");
      return cmd_evaluate_model(model, src, ref, mode, beam, report, eval_output, out);
    }
    if (*bench_cmd) return cmd_bench(bench_args, out, err);
    if (*average_cmd) return cmd_average(checkpoints, average_output, out);
    if (*synth_cmd) return cmd_synth(synth, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const OptionError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace ctcnat::cli
