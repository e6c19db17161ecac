#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "octctx/octctx.hpp"

namespace fs = std::filesystem;
using namespace octctx;

namespace {

const std::string kSmall =
    " --window 8 --ancestors 1 --embed 4 --model-dim 16 --heads 2 --hidden-main 12 --hidden-branch 8"
    " --branch-epochs 1 --main-epochs 1 --batch 32";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("octctx_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Runs the binary; stdout lands in `out_`, stderr in `err_`.
  int run(const std::string& args) {
    const auto o = path("stdout.txt"), e = path("stderr.txt");
    const std::string cmd = std::string(OCTCTX_CLI_PATH) + " " + args + " >" + o + " 2>" + e;
    const int status = std::system(cmd.c_str());
    out_ = slurp(o);
    err_ = slurp(e);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::map<std::string, std::string> record() const {
    std::map<std::string, std::string> kv;
    std::istringstream in(out_);
    std::string line;
    while (std::getline(in, line)) {
      const auto k = line.find(" = ");
      if (k != std::string::npos) kv[line.substr(0, k)] = line.substr(k + 3);
    }
    return kv;
  }

  fs::path dir_;
  std::string out_, err_;
};

}  // namespace

TEST_F(Cli, SynthWritesPlyDeterministically) {
  ASSERT_EQ(run("synth --kind plane --n 5000 --seed 1 --out " + path("a.ply")), 0) << err_;
  ASSERT_EQ(run("synth --kind plane --n 5000 --seed 1 --out " + path("b.ply")), 0) << err_;
  EXPECT_EQ(ply::read_file(path("a.ply")).size(), 5000u);
  EXPECT_EQ(slurp(path("a.ply")), slurp(path("b.ply")));
  EXPECT_NE(slurp(path("a.ply.config")).find("kind = plane"), std::string::npos);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("synth --kind bogus --n 10 --out " + path("x.ply")), 2);
  EXPECT_NE(err_.find("--kind"), std::string::npos);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train --corpus a.ply --out m.ckpt --residual maybe"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, MissingCorpusIsDataError) {
  EXPECT_EQ(run("train --corpus " + path("nope.ply") + " --out " + path("m.ckpt")), 3);
  EXPECT_FALSE(fs::exists(path("m.ckpt")));
}

TEST_F(Cli, TrainEncodeDecodeEval) {
  ASSERT_EQ(run("synth --kind sphere --n 600 --seed 2 --out " + path("s.ply")), 0);
  ASSERT_EQ(run("train --corpus " + path("s.ply") + " --depth 6 --seed 3 --out " + path("m.ckpt") + kSmall), 0) << err_;
  EXPECT_EQ(record()["variant"], "EMR");
  const auto trace = slurp(path("m.ckpt.trace.csv"));
  EXPECT_EQ(trace.rfind("batch_index,ce_loss,mse_loss\n", 0), 0u);
  EXPECT_NE(slurp(path("m.ckpt.config")).find("residual = on"), std::string::npos);

  ASSERT_EQ(run("encode --in " + path("s.ply") + " --ckpt " + path("m.ckpt") + " --depth 6 --out " + path("s.bin")), 0)
      << err_;
  EXPECT_EQ(record()["point_count"], "600");
  EXPECT_EQ(slurp(path("s.bin.report")), out_);

  ASSERT_EQ(run("decode --in " + path("s.bin") + " --ckpt " + path("m.ckpt") + " --out " + path("d.ply")), 0) << err_;
  const auto dec = ply::read_file(path("d.ply"));
  EXPECT_EQ(dec.size(), quantize(ply::read_file(path("s.ply")), 6).size());

  ASSERT_EQ(run("eval --ref " + path("s.ply") + " --bitstream " + path("s.bin") + " --ckpt " + path("m.ckpt")), 0);
  auto kv = record();
  EXPECT_EQ(kv["chamfer"], "0");
  EXPECT_EQ(kv["d1_psnr"], "inf");
  EXPECT_DOUBLE_EQ(std::stod(kv["bpip"]), 8.0 * static_cast<double>(fs::file_size(path("s.bin"))) / 600.0);
}

TEST_F(Cli, TruncatedEvalMatchesOfflineChamfer) {
  ASSERT_EQ(run("synth --kind gaussian_clusters --n 800 --seed 4 --out " + path("g.ply")), 0);
  ASSERT_EQ(run("train --corpus " + path("g.ply") + " --depth 6 --main-epochs 0 --branch-epochs 0 --out " +
                path("u.ckpt")),
            0);
  ASSERT_EQ(run("encode --in " + path("g.ply") + " --ckpt " + path("u.ckpt") + " --depth 6 --levels 4 --out " +
                path("g.bin")),
            0);
  ASSERT_EQ(run("eval --ref " + path("g.ply") + " --bitstream " + path("g.bin") + " --ckpt " + path("u.ckpt")), 0);
  const auto q = quantize(ply::read_file(path("g.ply")), 6);
  auto trunc = reconstruct(build(q), 4);
  trunc.origin = q.origin;
  trunc.scale = q.scale;
  EXPECT_NEAR(std::stod(record()["chamfer"]), chamfer(trunc, q), 1e-12);
  EXPECT_GT(std::stod(record()["chamfer"]), 0.0);
}

TEST_F(Cli, MismatchAndCorruptionExitCodes) {
  ASSERT_EQ(run("synth --kind plane --n 400 --seed 5 --out " + path("p.ply")), 0);
  const std::string untrained = " --depth 5 --main-epochs 0 --branch-epochs 0";
  ASSERT_EQ(run("train --corpus " + path("p.ply") + untrained + " --seed 1 --out " + path("a.ckpt")), 0);
  ASSERT_EQ(run("train --corpus " + path("p.ply") + untrained + " --seed 2 --out " + path("b.ckpt")), 0);
  ASSERT_EQ(run("encode --in " + path("p.ply") + " --ckpt " + path("a.ckpt") + " --depth 5 --out " + path("p.bin")), 0);
  EXPECT_EQ(run("decode --in " + path("p.bin") + " --ckpt " + path("b.ckpt") + " --out " + path("x.ply")), 4);

  auto bytes = read_bytes(path("p.bin"));
  bytes.back() ^= 0x33;
  write_bytes(path("bad.bin"), bytes);
  EXPECT_EQ(run("decode --in " + path("bad.bin") + " --ckpt " + path("a.ckpt") + " --out " + path("x.ply")), 5);
  bytes[0] = 'Z';
  write_bytes(path("bad.bin"), bytes);
  EXPECT_EQ(run("decode --in " + path("bad.bin") + " --ckpt " + path("a.ckpt") + " --out " + path("x.ply")), 5);
}

TEST_F(Cli, TrainIsDeterministicAndBaseFlagged) {
  ASSERT_EQ(run("synth --kind lidar_rings --n 500 --seed 6 --out " + path("l.ply")), 0);
  for (const char* name : {"x.ckpt", "y.ckpt"})
    ASSERT_EQ(run("train --corpus " + path("l.ply") + " --depth 5 --residual off --branch off --out " + path(name) +
                  kSmall),
              0);
  EXPECT_EQ(record()["variant"], "base");
  EXPECT_EQ(slurp(path("x.ckpt")), slurp(path("y.ckpt")));
  EXPECT_EQ(slurp(path("x.ckpt.trace.csv")), slurp(path("y.ckpt.trace.csv")));
  const auto m = checkpoint::load(path("x.ckpt"));
  EXPECT_FALSE(m.config().residual);
  EXPECT_FALSE(m.config().branch);
}

TEST_F(Cli, AnalyzeAndAblate) {
  ASSERT_EQ(run("synth --kind sphere --n 500 --seed 7 --out " + path("s.ply")), 0);
  ASSERT_EQ(run("train --corpus " + path("s.ply") + " --depth 5 --residual off --branch off --out " + path("base.ckpt") +
                kSmall),
            0);
  ASSERT_EQ(run("train --corpus " + path("s.ply") + " --depth 5 --residual on --branch off --out " + path("er.ckpt") +
                kSmall),
            0);
  ASSERT_EQ(run("analyze --ckpt " + path("base.ckpt") + " " + path("er.ckpt") + " --corpus " + path("s.ply") +
                " --depth 5"),
            0)
      << err_;
  EXPECT_NE(out_.find("variant = base"), std::string::npos);
  EXPECT_NE(out_.find("variant = ER"), std::string::npos);
  std::size_t ads = 0;
  for (auto k = out_.find("ad = "); k != std::string::npos; k = out_.find("ad = ", k + 1)) ++ads;
  EXPECT_EQ(ads, 2u);

  ASSERT_EQ(run("ablate --corpus " + path("s.ply") + " --depth 5 --out-dir " + path("abl") + kSmall), 0) << err_;
  for (const char* v : {"base", "ER", "EM", "EMR"}) {
    EXPECT_TRUE(fs::exists(path("abl/") + v + ".ckpt")) << v;
    EXPECT_NE(out_.find(std::string("\n") + v + ","), std::string::npos) << v;
  }
}
