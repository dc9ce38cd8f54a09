#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "ctcnat/errors.hpp"
#include "ctcnat/training.hpp"

using namespace ctcnat;
using ctcnat::cli::run;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ctcnat_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

// A small trained model shared by the tests below.
class TrainedModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    // ctest runs each case in its own process, possibly concurrently.
    dir_ = temp_dir("model_" + std::to_string(::getpid()));
    ASSERT_EQ(call({"synth", "--task", "copy", "--symbols", "6", "--count", "200", "--min-len", "2", "--max-len", "5",
                    "--seed", "3", "--src-out", (dir_ / "train.src").string(), "--tgt-out",
                    (dir_ / "train.tgt").string()})
                  .code,
              0);
    ASSERT_EQ(call({"synth", "--task", "copy", "--symbols", "6", "--count", "20", "--min-len", "2", "--max-len", "5",
                    "--seed", "4", "--src-out", (dir_ / "valid.src").string(), "--tgt-out",
                    (dir_ / "valid.tgt").string()})
                  .code,
              0);
    for (const std::string variant : {"encoder-decoder", "autoregressive-baseline"}) {
      const fs::path ck = dir_ / variant;
      write_file(dir_ / (variant + ".cfg"),
                 "# tiny model\nvariant=" + variant +
                     "\nd_model=16\nff_dim=32\nheads=2\nenc_layers=1\ndec_layers=1\nk=2\ndropout=0\n"
                     "lr=0.003\nwarmup=10\nbatch_size=8\nmax_steps=20\nvalid_interval=10\nkeep_top=2\n" +
                     "train_src=" + (dir_ / "train.src").string() + "\ntrain_tgt=" + (dir_ / "train.tgt").string() +
                     "\nvalid_src=" + (dir_ / "valid.src").string() + "\nvalid_tgt=" + (dir_ / "valid.tgt").string() +
                     "\ncheckpoint_dir=" + ck.string() + "\n");
      const Result r = call({"train", "--config", (dir_ / (variant + ".cfg")).string()});
      ASSERT_EQ(r.code, 0) << r.err;
    }
  }

  static fs::path dir_;
};

fs::path TrainedModel::dir_;

}  // namespace

TEST(RunConfig, ParseSerializeRoundTrip) {
  cli::RunConfig c;
  c.variant = Variant::kDeepEncoder;
  c.dec_layers = 0;
  c.dropout = 0.25;
  c.vocab_mode = TokenMode::kChar;
  c.lr = 5e-4;
  c.seed = 99;
  c.train_src = "a/b.src";
  c.checkpoint_dir = "out";
  EXPECT_EQ(cli::parse_run_config(cli::serialize_run_config(c)), c);
  EXPECT_EQ(cli::run_config_keys().size(), 23u);
  EXPECT_EQ(cli::parse_run_config("# comment\n\n  k = 4 \n").k, 4u);
}

TEST(RunConfig, Errors) {
  try {
    (void)cli::parse_run_config("foo=1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos);
  }
  EXPECT_THROW(cli::parse_run_config("k=three\n"), ConfigError);
  EXPECT_THROW(cli::parse_run_config("k=1\nk=2\n"), ConfigError);
  EXPECT_THROW(cli::parse_run_config("just a line\n"), ConfigError);
  EXPECT_THROW(cli::parse_run_config("variant=rnn\n"), ConfigError);
}

TEST(Cli, UsageErrorsExitTwo) {
  const auto dir = temp_dir("usage");
  write_file(dir / "bad.cfg", "foo=1\n");
  const Result unknown = call({"train", "--config", (dir / "bad.cfg").string()});
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.err.find("foo"), std::string::npos);
  EXPECT_EQ(call({"train", "--config", (dir / "absent.cfg").string()}).code, 2);
  EXPECT_EQ(call({"frobnicate"}).code, 2);
  EXPECT_EQ(call({}).code, 2);
  EXPECT_EQ(call({"translate", "--model", "x"}).code, 2);
}

TEST(Cli, HelpExitsZero) {
  const Result r = call({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("translate"), std::string::npos);
  EXPECT_EQ(call({"bench", "--help"}).code, 0);
}

TEST(Cli, SynthIsDeterministic) {
  const auto dir = temp_dir("synth");
  for (const char* tag : {"a", "b"}) {
    ASSERT_EQ(call({"synth", "--task", "duplicate", "--count", "30", "--seed", "7", "--src-out",
                    (dir / (std::string(tag) + ".src")).string(), "--tgt-out", (dir / (std::string(tag) + ".tgt")).string()})
                  .code,
              0);
  }
  EXPECT_EQ(slurp(dir / "a.src"), slurp(dir / "b.src"));
  EXPECT_EQ(slurp(dir / "a.tgt"), slurp(dir / "b.tgt"));
  EXPECT_EQ(call({"synth", "--task", "sort", "--src-out", (dir / "c.src").string(), "--tgt-out",
                  (dir / "c.tgt").string()})
                .code,
            2);
}

TEST(Cli, EvaluateFilesIdentity) {
  const auto dir = temp_dir("eval");
  write_file(dir / "ref.txt", "a b c d\ne f g h i\n");
  const Result r = call({"evaluate", "--hyp", (dir / "ref.txt").string(), "--ref", (dir / "ref.txt").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("100.0"), std::string::npos);
}

TEST_F(TrainedModel, TrainWritesCheckpoints) {
  EXPECT_TRUE(fs::exists(dir_ / "encoder-decoder" / "final.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "encoder-decoder" / "train_log.csv"));
  std::size_t top = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "encoder-decoder")) top += e.path().filename().string().rfind("top-step", 0) == 0;
  EXPECT_EQ(top, 2u);
}

TEST_F(TrainedModel, TranslateOneLinePerInput) {
  write_file(dir_ / "in.txt", "t1 t2 t3\n\nt4 t0\n");
  const Result r = call({"translate", "--model", (dir_ / "encoder-decoder" / "final.ckpt").string(), "--input",
                         (dir_ / "in.txt").string(), "--output", (dir_ / "out.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string text = slurp(dir_ / "out.txt");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);

  write_file(dir_ / "empty.txt", "");
  ASSERT_EQ(call({"translate", "--model", (dir_ / "encoder-decoder" / "final.ckpt").string(), "--input",
                  (dir_ / "empty.txt").string(), "--output", (dir_ / "empty.out").string()})
                .code,
            0);
  EXPECT_EQ(slurp(dir_ / "empty.out"), "");
}

TEST_F(TrainedModel, ArBeamOneEqualsGreedy) {
  const std::string model = (dir_ / "autoregressive-baseline" / "final.ckpt").string();
  const std::string in = (dir_ / "valid.src").string();
  ASSERT_EQ(call({"translate", "--model", model, "--input", in, "--output", (dir_ / "g.txt").string()}).code, 0);
  ASSERT_EQ(call({"translate", "--model", model, "--input", in, "--output", (dir_ / "b.txt").string(), "--mode", "beam",
                  "--beam", "1"})
                .code,
            0);
  EXPECT_EQ(slurp(dir_ / "g.txt"), slurp(dir_ / "b.txt"));
}

TEST_F(TrainedModel, EvaluateModelReport) {
  const Result r = call({"evaluate", "--model", (dir_ / "encoder-decoder" / "final.ckpt").string(), "--src",
                         (dir_ / "valid.src").string(), "--ref", (dir_ / "valid.tgt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("sentence_id,src_len,out_len,null_count,sent_bleu\n", 0), 0u);
  EXPECT_NE(r.out.find("# corpus_bleu="), std::string::npos);
}

TEST_F(TrainedModel, AverageOfOneIsBitExact) {
  const fs::path src = dir_ / "encoder-decoder" / "final.ckpt";
  const fs::path avg = dir_ / "avg.ckpt";
  ASSERT_EQ(call({"average", "--checkpoints", src.string(), "--output", avg.string()}).code, 0);
  const Checkpoint a = load_checkpoint(src), b = load_checkpoint(avg);
  for (const auto& [name, t] : a.params) {
    const auto& other = b.params.at(name);
    EXPECT_TRUE(std::equal(t.data().begin(), t.data().end(), other.data().begin())) << name;
  }
  // Mixed configurations are refused.
  EXPECT_NE(call({"average", "--checkpoints", src.string(), (dir_ / "autoregressive-baseline" / "final.ckpt").string(), "--output",
                  (dir_ / "mixed.ckpt").string()})
                .code,
            0);
}

TEST_F(TrainedModel, BenchWritesCsvAndSummary) {
  const Result r = call({"bench", "--ar-model", (dir_ / "autoregressive-baseline" / "final.ckpt").string(), "--nar-model",
                         (dir_ / "encoder-decoder" / "final.ckpt").string(), "--src", (dir_ / "valid.src").string(), "--ref",
                         (dir_ / "valid.tgt").string(), "--reps", "3", "--csv", (dir_ / "t.csv").string(), "--summary",
                         (dir_ / "s.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir_ / "t.csv");
  EXPECT_EQ(csv.rfind("sentence_id,src_len,out_len,mode,ms\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 4 * 20);
  EXPECT_FALSE(slurp(dir_ / "s.txt").empty());
  EXPECT_EQ(call({"bench", "--nar-model", (dir_ / "encoder-decoder" / "final.ckpt").string(), "--src",
                  (dir_ / "valid.src").string(), "--reps", "2"})
                .code,
            2);
}
