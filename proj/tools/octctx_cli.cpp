// octctx: synth / train / encode / decode / eval / analyze / ablate.
//
// Exit codes: 0 ok, 2 usage, 3 data error, 4 model mismatch, 5 corrupt stream.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "octctx/octctx.hpp"

namespace fs = std::filesystem;
using namespace octctx;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kMismatch = 4, kCorrupt = 5 };

void log(const std::string& msg) { std::cerr << "[octctx] " << msg << "\n"; }

std::string seconds(double v) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(3);
  o << v << " s";
  return o.str();
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

// key = value record of every flag the subcommand accepts, given or defaulted.
std::string config_echo(const CLI::App& sub) {
  std::ostringstream o;
  o << "subcommand = " << sub.get_name() << "\n";
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const auto& name = opt->get_lnames().front();
    if (name == "help") continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : " ") + r;
    } else {
      value = opt->get_expected_max() == 0 ? "false" : opt->get_default_str();
    }
    o << name << " = " << value << "\n";
  }
  return o.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  out << text;
  if (!out) throw InvalidInput("write failed for '" + path + "'");
}

void echo_next_to(const std::string& output, const CLI::App& sub) { write_text(output + ".config", config_echo(sub)); }

std::vector<NodeSequence> load_corpus(const std::vector<std::string>& paths, int depth) {
  if (paths.empty()) throw InvalidInput("no corpus files given");
  std::vector<NodeSequence> corpus;
  for (const auto& p : paths) corpus.push_back(build(quantize(ply::read_file(p), depth)));
  return corpus;
}

struct ModelFlags {
  std::string preset = "desk";
  std::string residual = "on";
  std::string branch = "on";
  int window = 0, ancestors = -1, embed = 0, model_dim = 0, heads = 0, hidden_main = 0, hidden_branch = 0;
  bool strict_level = false;

  void add(CLI::App* app, bool toggles = true) {
    app->add_option("--preset", preset, "base configuration")->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
    if (toggles) {
      app->add_option("--residual", residual, "context feature residual")->check(CLI::IsMember({"on", "off"}))->capture_default_str();
      app->add_option("--branch", branch, "8-way occupancy branch")->check(CLI::IsMember({"on", "off"}))->capture_default_str();
    }
    app->add_option("--window", window, "context slots N (0 = preset)")->capture_default_str();
    app->add_option("--ancestors", ancestors, "ancestors K per slot (-1 = preset)")->capture_default_str();
    app->add_option("--embed", embed, "embedding width per feature (0 = preset)")->capture_default_str();
    app->add_option("--model-dim", model_dim, "attention width (0 = preset)")->capture_default_str();
    app->add_option("--heads", heads, "attention heads (0 = preset)")->capture_default_str();
    app->add_option("--hidden-main", hidden_main, "main MLP width (0 = preset)")->capture_default_str();
    app->add_option("--hidden-branch", hidden_branch, "branch MLP width (0 = preset)")->capture_default_str();
    app->add_flag("--strict-level", strict_level, "mask predecessors on other levels");
  }

  ModelConfig make(std::uint64_t seed) const {
    auto c = preset == "paper" ? ModelConfig::paper_scale() : ModelConfig::desk();
    c.residual = residual == "on";
    c.branch = branch == "on";
    if (window) c.context.window = window;
    if (ancestors >= 0) c.context.ancestors = ancestors;
    if (embed) c.embed_dim = embed;
    if (model_dim) c.model_dim = model_dim;
    if (heads) c.heads = heads;
    if (hidden_main) c.hidden_main = hidden_main;
    if (hidden_branch) c.hidden_branch = hidden_branch;
    c.context.strict_level = strict_level;
    c.seed = seed;
    c.check();
    return c;
  }
};

struct ScheduleFlags {
  Schedule s;
  void add(CLI::App* app) {
    app->add_option("--branch-epochs", s.branch_epochs, "stage 1 epochs")->capture_default_str();
    app->add_option("--main-epochs", s.main_epochs, "stage 2 epochs")->capture_default_str();
    app->add_option("--batch", s.batch_size, "nodes per batch")->capture_default_str();
    app->add_option("--lr", s.lr, "initial learning rate")->capture_default_str();
    app->add_option("--decay", s.decay, "per-epoch learning rate decay")->capture_default_str();
    app->add_flag("--stage1-extractor", s.stage1_extractor, "train embeddings and attention with the branch in stage 1");
  }
};

struct SynthCmd {
  std::string kind, out;
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  SynthOptions opt;
  bool ascii = false;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("synth", "generate a synthetic point cloud");
    app->add_option("--kind", kind, "generator")
        ->required()
        ->check(CLI::IsMember({"uniform", "plane", "sphere", "gaussian_clusters", "lidar_rings"}));
    app->add_option("--n", n, "point count")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--seed", seed, "random seed")->capture_default_str();
    app->add_option("--out", out, "output PLY")->required();
    app->add_option("--jitter", opt.jitter, "noise amplitude")->capture_default_str();
    app->add_option("--radius", opt.radius, "sphere radius")->capture_default_str();
    app->add_option("--clusters", opt.clusters, "cluster count")->capture_default_str();
    app->add_option("--cluster-sigma", opt.cluster_sigma, "cluster spread")->capture_default_str();
    app->add_option("--beams", opt.beams, "lidar beam count")->capture_default_str();
    app->add_flag("--ascii", ascii, "write ASCII PLY");
  }

  int run() const {
    const auto pc = synth(parse_synth_kind(kind), n, seed, opt);
    ply::write_file(out, pc, ascii ? ply::Format::ascii : ply::Format::binary_little_endian);
    echo_next_to(out, *app);
    log("wrote " + std::to_string(pc.points.size()) + " points to " + out);
    return kOk;
  }
};

struct TrainCmd {
  std::vector<std::string> corpus;
  int depth = 8;
  std::uint64_t seed = 1;
  std::string out, trace;
  ModelFlags model;
  ScheduleFlags sched;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("train", "train a context model on PLY files");
    app->add_option("--corpus", corpus, "training PLY files")->required();
    app->add_option("--depth", depth, "octree depth")->check(CLI::Range(1, kMaxDepth))->capture_default_str();
    app->add_option("--seed", seed, "seed for init and batch order")->capture_default_str();
    app->add_option("--out", out, "checkpoint path")->required();
    app->add_option("--trace", trace, "loss trace path (default: <out>.trace.csv)");
    model.add(app);
    sched.add(app);
  }

  int run() const {
    const auto data = load_corpus(corpus, depth);
    ContextModel m(model.make(seed));
    auto s = sched.s;
    s.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = train(m, data, s);
    log("trained " + m.config().variant() + " in " +
        seconds(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
    checkpoint::save(out, m);
    std::ostringstream t;
    write_trace(t, r);
    write_text(trace.empty() ? out + ".trace.csv" : trace, t.str());
    write_text(out + ".config", config_echo(*app) + "# resolved model\n" + m.config().to_text());
    std::cout << "variant = " << m.config().variant() << "\n"
              << "batches = " << r.trace.size() << "\n"
              << "early_ce = " << fmt(r.stage(2).empty() ? 0.0 : early_ce(r, 0.1)) << "\n";
    return kOk;
  }
};

struct EncodeCmd {
  std::string in, ckpt, out, report;
  int depth = 8, levels = 0;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("encode", "compress a PLY file");
    app->add_option("--in", in, "input PLY")->required();
    app->add_option("--ckpt", ckpt, "model checkpoint")->required();
    app->add_option("--depth", depth, "octree depth")->check(CLI::Range(1, kMaxDepth))->capture_default_str();
    app->add_option("--levels", levels, "coded levels (0 = depth)")->capture_default_str();
    app->add_option("--out", out, "output bitstream")->required();
    app->add_option("--report", report, "report path (default: <out>.report)");
  }

  int run() const {
    const auto m = checkpoint::load(ckpt);
    const auto r = encode(ply::read_file(in), depth, levels ? levels : depth, m);
    write_bytes(out, serialize(r.bitstream));
    const auto text = r.report.to_text(false);
    write_text(report.empty() ? out + ".report" : report, text);
    echo_next_to(out, *app);
    std::cout << text;
    log("encoded " + std::to_string(r.report.node_count) + " nodes in " + seconds(r.report.wall_seconds));
    return kOk;
  }
};

struct DecodeCmd {
  std::string in, ckpt, out;
  bool ascii = false;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("decode", "decompress a bitstream to PLY");
    app->add_option("--in", in, "input bitstream")->required();
    app->add_option("--ckpt", ckpt, "model checkpoint")->required();
    app->add_option("--out", out, "output PLY")->required();
    app->add_flag("--ascii", ascii, "write ASCII PLY");
  }

  int run() const {
    const auto m = checkpoint::load(ckpt);
    const auto q = decode(read_bytes(in), m);
    auto pc = dequantize(q);
    pc.source_id = in;
    ply::write_file(out, pc, ascii ? ply::Format::ascii : ply::Format::binary_little_endian);
    echo_next_to(out, *app);
    log("decoded " + std::to_string(q.size()) + " points to " + out);
    return kOk;
  }
};

struct EvalCmd {
  std::string ref, bitstream, ckpt;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("eval", "score a bitstream against its source cloud");
    app->add_option("--ref", ref, "original PLY")->required();
    app->add_option("--bitstream", bitstream, "bitstream")->required();
    app->add_option("--ckpt", ckpt, "model checkpoint")->required();
  }

  int run() const {
    const auto m = checkpoint::load(ckpt);
    const auto bytes = read_bytes(bitstream);
    const auto h = parse_header(bytes);
    const auto dec = decode(bytes, m);
    const auto orig = quantize(ply::read_file(ref), h.depth);
    const double psnr = d1_psnr(dec, orig, h.depth);
    std::cout << "bpip = " << fmt(bpip(8.0 * static_cast<double>(bytes.size()), h.point_count)) << "\n"
              << "chamfer = " << fmt(chamfer(dec, orig)) << "\n"
              << "d1_psnr = " << (std::isinf(psnr) ? std::string("inf") : fmt(psnr)) << "\n"
              << "coded_levels = " << h.coded_levels << "\n"
              << "depth = " << h.depth << "\n";
    return kOk;
  }
};

struct AnalyzeCmd {
  std::vector<std::string> ckpts, corpus;
  std::string windows;
  int depth = 8;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("analyze", "inter-class feature statistics per checkpoint");
    app->add_option("--ckpt", ckpts, "checkpoint(s)")->required();
    auto* c = app->add_option("--corpus", corpus, "PLY files");
    auto* w = app->add_option("--windows", windows, "window dump file");
    c->excludes(w);
    app->add_option("--depth", depth, "octree depth for --corpus")->check(CLI::Range(1, kMaxDepth))->capture_default_str();
  }

  int run() const {
    std::vector<NodeSequence> seqs;
    std::vector<LabeledWindow> dump;
    if (!windows.empty()) {
      std::ifstream in(windows);
      if (!in) throw InvalidInput("cannot open '" + windows + "'");
      dump = read_window_dump(in);
    } else {
      seqs = load_corpus(corpus, depth);
    }
    for (const auto& path : ckpts) {
      const auto m = checkpoint::load(path);
      const auto bank = windows.empty() ? collect_features(m, seqs) : collect_features(m, dump);
      std::cout << "checkpoint = " << path << "\nvariant = " << m.config().variant() << "\n"
                << interclass_stats(bank).to_text();
    }
    return kOk;
  }
};

struct AblateCmd {
  std::vector<std::string> corpus;
  int depth = 8;
  std::uint64_t seed = 1;
  std::string out_dir;
  ModelFlags model;
  ScheduleFlags sched;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("ablate", "train and score base / ER / EM / EMR on one corpus");
    app->add_option("--corpus", corpus, "PLY files")->required();
    app->add_option("--depth", depth, "octree depth")->check(CLI::Range(1, kMaxDepth))->capture_default_str();
    app->add_option("--seed", seed, "seed shared by all variants")->capture_default_str();
    app->add_option("--out-dir", out_dir, "directory for checkpoints and traces")->required();
    model.add(app, false);
    sched.add(app);
  }

  int run() const {
    const auto data = load_corpus(corpus, depth);
    std::vector<RawPointCloud> clouds;
    for (const auto& p : corpus) clouds.push_back(ply::read_file(p));
    fs::create_directories(out_dir);
    std::ostringstream table;
    table << "variant,bpip,early_ce,ad,acos\n";
    for (const auto& [res, br] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
      auto flags = model;
      flags.residual = res ? "on" : "off";
      flags.branch = br ? "on" : "off";
      ContextModel m(flags.make(seed));
      auto s = sched.s;
      s.seed = seed;
      const auto r = train(m, data, s);
      const auto name = m.config().variant();
      const auto base = (fs::path(out_dir) / name).string();
      checkpoint::save(base + ".ckpt", m);
      std::ostringstream t;
      write_trace(t, r);
      write_text(base + ".trace.csv", t.str());

      double bits = 0.0, points = 0.0;
      for (const auto& pc : clouds) {
        const auto e = encode(pc, depth, depth, m);
        bits += static_cast<double>(e.report.total_bits);
        points += static_cast<double>(e.report.point_count);
      }
      table << name << ',' << fmt(bits / points) << ',' << fmt(early_ce(r, 0.1));
      try {
        const auto st = interclass_stats(collect_features(m, data));
        table << ',' << fmt(st.ad) << ',' << fmt(st.acos) << "\n";
      } catch (const InsufficientClasses&) {
        table << ",nan,nan\n";
      }
      log("finished " + name);
    }
    write_text((fs::path(out_dir) / "ablation.csv").string(), table.str());
    write_text((fs::path(out_dir) / "ablation.config").string(), config_echo(*app));
    std::cout << table.str();
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"octree point cloud geometry codec with a learned context model"};
  app.require_subcommand(1);
  SynthCmd synth_cmd;
  TrainCmd train_cmd;
  EncodeCmd encode_cmd;
  DecodeCmd decode_cmd;
  EvalCmd eval_cmd;
  AnalyzeCmd analyze_cmd;
  AblateCmd ablate_cmd;
  synth_cmd.add(app);
  train_cmd.add(app);
  encode_cmd.add(app);
  decode_cmd.add(app);
  eval_cmd.add(app);
  analyze_cmd.add(app);
  ablate_cmd.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return kUsage;
  }

  try {
    if (*synth_cmd.app) return synth_cmd.run();
    if (*train_cmd.app) return train_cmd.run();
    if (*encode_cmd.app) return encode_cmd.run();
    if (*decode_cmd.app) return decode_cmd.run();
    if (*eval_cmd.app) return eval_cmd.run();
    if (*analyze_cmd.app) return analyze_cmd.run();
    if (*ablate_cmd.app) return ablate_cmd.run();
  } catch (const ModelMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMismatch;
  } catch (const CorruptStream& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCorrupt;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
