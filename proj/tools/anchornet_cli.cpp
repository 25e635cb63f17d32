// Command-line front end for the patch localization toolkit: receptive-field
// analysis, location mapping, patch selection, text model training and
// evaluation, and pipeline cost estimation.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "anchornet/corpus.hpp"
#include "anchornet/flops.hpp"
#include "anchornet/io.hpp"
#include "anchornet/localization.hpp"
#include "anchornet/model.hpp"
#include "anchornet/optim.hpp"
#include "anchornet/pipeline.hpp"
#include "anchornet/rf_calculus.hpp"
#include "anchornet/train.hpp"

namespace an = anchornet;

namespace {

an::Size2 parse_size_arg(const std::string& s) {
  try {
    return an::detail::to_size(s, "size argument");
  } catch (const an::DataError& e) {
    throw std::invalid_argument(e.what());
  }
}

std::vector<an::StackLayer> load_stack_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw an::DataError("cannot read " + path);
  return an::parse_stack(f);
}

an::Heatmap load_heatmap_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw an::DataError("cannot read " + path);
  return an::parse_heatmap(f);
}

an::PipelineStats load_stats_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw an::DataError("cannot read " + path);
  return an::parse_stats(f);
}

// Output sink: --out FILE or stdout.
struct Sink {
  std::ofstream file;
  std::ostream* os = &std::cout;
  explicit Sink(const std::string& path) {
    if (!path.empty()) {
      file.open(path);
      if (!file) throw an::DataError("cannot write " + path);
      os = &file;
    }
  }
  std::ostream& out() { return *os; }
};

// Flat key=value config for train-text: model dimensions plus schedule knobs
// plus synthetic-corpus sizing.
struct TrainFile {
  an::ModelConfig model;
  an::TrainConfig sched;
  size_t synthetic_docs = 2500;
  size_t synthetic_filler_vocab = 200;
};

TrainFile parse_train_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw an::DataError("cannot read " + path);
  std::string line;
  if (!std::getline(f, line) || line != "anchornet-train v1")
    throw an::DataError(path + ": bad header, expected 'anchornet-train v1'");
  TrainFile tf;
  tf.model.vocab_size = 2;  // replaced by the real vocabulary before training
  size_t lineno = 1;
  std::string model_text;
  while (std::getline(f, line)) {
    ++lineno;
    if (an::detail::skippable(line)) continue;
    const std::string where = path + " line " + std::to_string(lineno);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw an::DataError(where + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "epochs")
      tf.sched.epochs = static_cast<size_t>(an::detail::to_int(val, where));
    else if (key == "batch_size")
      tf.sched.batch_size = static_cast<size_t>(an::detail::to_int(val, where));
    else if (key == "lr")
      tf.sched.lr = an::detail::to_double(val, where);
    else if (key == "momentum")
      tf.sched.momentum = an::detail::to_double(val, where);
    else if (key == "weight_decay")
      tf.sched.weight_decay = an::detail::to_double(val, where);
    else if (key == "target_val_acc")
      tf.sched.target_val_acc = an::detail::to_double(val, where);
    else if (key == "synthetic_docs")
      tf.synthetic_docs = static_cast<size_t>(an::detail::to_int(val, where));
    else if (key == "synthetic_filler_vocab")
      tf.synthetic_filler_vocab = static_cast<size_t>(an::detail::to_int(val, where));
    else
      model_text += line + "\n";
  }
  if (!model_text.empty()) {
    // Let the model-config parser own the remaining keys, but keep our
    // vocab_size placeholder if the file does not set one.
    an::ModelConfig base = tf.model;
    std::string full = "vocab_size=2\n" + model_text;
    an::ModelConfig parsed = an::parse_model_config_text(full);
    parsed.vocab_size = base.vocab_size;
    tf.model = parsed;
  }
  return tf;
}

an::Model load_model(const std::string& path) {
  return an::model_from_checkpoint(an::load_checkpoint(path));
}

an::Vocab load_vocab_for(const std::string& ckpt_path, const std::string& vocab_path) {
  return an::load_vocab(vocab_path.empty() ? ckpt_path + ".vocab" : vocab_path);
}

void print_cost_report(std::ostream& os, const an::CostReport& rep) {
  os << "input " << rep.in_size.h << "x" << rep.in_size.w << "\n";
  for (const an::LayerCost& c : rep.layers) {
    os << "layer " << c.name << " op=" << an::op_name(c.kind) << " out=" << c.out_size.h << "x"
       << c.out_size.w << "x" << c.out_ch << " macs=" << c.macs << " flops=" << c.flops << "\n";
  }
  os << "total macs=" << rep.total_macs << " flops=" << rep.total_flops << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"patch localization toolkit"};
  app.require_subcommand(1);

  uint64_t seed = 1;
  std::string out_path;
  std::string config_path;
  app.add_option("--seed", seed, "seed for anything randomized");
  app.add_option("--out", out_path, "write primary output to this file instead of stdout");
  app.add_option("--config", config_path, "configuration file for the subcommand");

  // rf-analyze
  auto* rf_cmd = app.add_subcommand("rf-analyze", "receptive field and jump of a layer stack");
  std::string rf_stack;
  std::string rf_in;
  rf_cmd->add_option("--stack", rf_stack, "layer stack file")->required();
  rf_cmd->add_option("--in", rf_in, "input size HxW for per-layer output sizes");
  rf_cmd->callback([&] {
    Sink sink(out_path);
    const auto stack = load_stack_file(rf_stack);
    const auto geoms = an::stack_geoms(stack);
    std::vector<an::Size2> sizes;
    if (!rf_in.empty())
      sizes = an::layer_sizes(parse_size_arg(rf_in), geoms);
    for (size_t i = 0; i < geoms.size(); ++i) {
      const an::RFSummary s = an::compose(std::span(geoms.data(), i + 1));
      sink.out() << "layer " << i << " kernel=" << geoms[i].kernel.h << "x" << geoms[i].kernel.w
                 << " stride=" << geoms[i].stride.h << "x" << geoms[i].stride.w
                 << " rf=" << s.rf.h << "x" << s.rf.w << " jump=" << s.jump.h << "x" << s.jump.w;
      if (!sizes.empty()) sink.out() << " out=" << sizes[i].h << "x" << sizes[i].w;
      sink.out() << "\n";
    }
    const an::RFSummary s = an::compose(geoms);
    sink.out() << "stack rf=" << s.rf.h << "x" << s.rf.w << " jump=" << s.jump.h << "x"
               << s.jump.w << " offset=" << s.offset.h << "x" << s.offset.w << "\n";
    if (!rf_in.empty()) {
      const an::Size2 in = parse_size_arg(rf_in);
      const an::Size2 grid = an::patch_grid(in, s.rf, s.jump);
      sink.out() << "patch-grid " << grid.h << "x" << grid.w << "\n";
    }
  });

  // map
  auto* map_cmd = app.add_subcommand("map", "input patch behind one output location");
  std::string map_stack, map_in;
  int map_row = 0, map_col = 0;
  map_cmd->add_option("--stack", map_stack, "layer stack file")->required();
  map_cmd->add_option("--in", map_in, "input size HxW")->required();
  map_cmd->add_option("--row", map_row, "output row")->required();
  map_cmd->add_option("--col", map_col, "output column")->required();
  map_cmd->callback([&] {
    Sink sink(out_path);
    const auto stack = load_stack_file(map_stack);
    const auto geoms = an::stack_geoms(stack);
    const an::RFSummary s = an::compose(geoms, parse_size_arg(map_in));
    const an::PatchRect r = an::map_location({map_row, map_col}, s);
    sink.out() << "patch top=" << r.top << " left=" << r.left << " height=" << r.height
               << " width=" << r.width << "\n";
  });

  // lip
  auto* lip_cmd = app.add_subcommand("lip", "select low-overlap patches from a heatmap");
  std::string lip_map;
  an::LipParams lip_params;
  lip_cmd->add_option("--heatmap", lip_map, "heatmap file")->required();
  lip_cmd->add_option("--k", lip_params.max_patches, "max patches")->required();
  lip_cmd->add_option("--t", lip_params.overlap, "overlap threshold")->required();
  lip_cmd->add_option("--p", lip_params.visit_frac, "visited fraction of cells")->required();
  lip_cmd->callback([&] {
    Sink sink(out_path);
    const an::Heatmap hm = load_heatmap_file(lip_map);
    const an::LipResult res = an::lip(hm, lip_params);
    an::write_patches(sink.out(), res, hm.in_size);
  });

  // lip-sweep
  auto* sweep_cmd = app.add_subcommand("lip-sweep", "patch statistics over parameter grids");
  std::vector<std::string> sweep_maps;
  std::vector<double> sweep_t, sweep_p;
  std::string sweep_policy = "area";
  int sweep_k = 0;
  sweep_cmd->add_option("--heatmap", sweep_maps, "heatmap file(s)")->required();
  sweep_cmd->add_option("--t", sweep_t, "overlap threshold(s)")->required();
  sweep_cmd->add_option("--p", sweep_p, "visited fraction(s)")->required();
  sweep_cmd->add_option("--k-policy", sweep_policy, "area | fixed | unlimited");
  sweep_cmd->add_option("--k", sweep_k, "patch cap for --k-policy fixed");
  sweep_cmd->callback([&] {
    Sink sink(out_path);
    std::vector<an::Heatmap> maps;
    for (const std::string& p : sweep_maps) maps.push_back(load_heatmap_file(p));
    an::KPolicy policy;
    if (sweep_policy == "area")
      policy = an::KPolicy::AreaQuotient;
    else if (sweep_policy == "fixed")
      policy = an::KPolicy::Fixed;
    else if (sweep_policy == "unlimited")
      policy = an::KPolicy::Unlimited;
    else
      throw std::invalid_argument("--k-policy must be area, fixed, or unlimited");
    const auto points = an::lip_sweep(maps, sweep_t, sweep_p, policy, sweep_k);
    sink.out() << std::setprecision(6);
    for (const an::SweepPoint& pt : points) {
      sink.out() << "sweep t=" << pt.overlap << " p=" << pt.visit_frac
                 << " mean_patches=" << pt.mean_patches << " mean_coverage=" << pt.mean_coverage
                 << "\n";
    }
  });

  // flops-estimate
  auto* flops_cmd = app.add_subcommand("flops-estimate", "stack cost or pipeline cost ratio");
  std::string flops_stack, flops_in, flops_stats;
  flops_cmd->add_option("--stack", flops_stack, "layer stack file")->required();
  flops_cmd->add_option("--in", flops_in, "input size HxW for a plain cost report");
  flops_cmd->add_option("--stats", flops_stats, "branch workload stats for a ratio report");
  flops_cmd->callback([&] {
    Sink sink(out_path);
    const auto stack = load_stack_file(flops_stack);
    if (flops_in.empty() == flops_stats.empty())
      throw std::invalid_argument("flops-estimate needs exactly one of --in or --stats");
    if (!flops_in.empty()) {
      print_cost_report(sink.out(), an::model_flops(stack, parse_size_arg(flops_in)));
      return;
    }
    const an::PipelineStats st = load_stats_file(flops_stats);
    const an::RatioReport rep =
        an::pipeline_ratio(stack, st.full, st.branches, st.upstream_flops);
    sink.out() << std::setprecision(6);
    sink.out() << "full flops=" << rep.full_flops << " upstream=" << rep.upstream_flops << "\n";
    for (const an::BranchRatio& b : rep.branches) {
      sink.out() << "branch " << b.tag << " images=" << b.images
                 << " mean_patches=" << b.mean_patches << " patch_flops=" << b.patch_flops
                 << " ratio=" << b.ratio << "\n";
    }
    sink.out() << "overall ratio=" << rep.overall << "\n";
  });

  // train-text
  auto* train_cmd = app.add_subcommand("train-text", "train the text model");
  std::string train_corpus, train_corpus_out, train_log;
  bool train_synth = false;
  train_cmd->add_option("--corpus", train_corpus, "labeled corpus, one 'label<TAB>text' per line");
  train_cmd->add_flag("--synthetic", train_synth, "train on a generated planted-trigram corpus");
  train_cmd->add_option("--corpus-out", train_corpus_out, "write the generated corpus here");
  train_cmd->add_option("--log", train_log, "write per-epoch metrics here");
  train_cmd->callback([&] {
    if (out_path.empty())
      throw std::invalid_argument("train-text needs --out CHECKPOINT");
    if (train_synth == !train_corpus.empty())
      throw std::invalid_argument("train-text needs exactly one of --corpus or --synthetic");
    TrainFile tf;
    if (!config_path.empty()) {
      tf = parse_train_file(config_path);
    } else {
      // Compact defaults sized for the synthetic corpus.
      tf.model.embed_dim = 16;
      tf.model.head_mid = 8;
      tf.model.head_out = 16;
      tf.model.branch_filters = 32;
      tf.model.attn_dim = 16;
      tf.model.num_classes = 4;
      tf.model.seq_len = 20;
      tf.sched.target_val_acc = 0.95;
    }
    tf.sched.seed = seed;

    std::vector<an::Document> docs;
    if (train_synth) {
      an::SyntheticSpec spec;
      spec.num_classes = tf.model.num_classes;
      spec.n_docs = tf.synthetic_docs;
      spec.seq_len = tf.model.seq_len;
      spec.filler_vocab = tf.synthetic_filler_vocab;
      spec.seed = seed;
      docs = an::make_planted_corpus(spec);
      if (!train_corpus_out.empty()) {
        std::ofstream f(train_corpus_out);
        if (!f) throw an::DataError("cannot write " + train_corpus_out);
        an::write_corpus(f, docs);
      }
    } else {
      docs = an::load_corpus(train_corpus);
      size_t max_label = 0;
      for (const an::Document& d : docs) max_label = std::max(max_label, size_t(d.label));
      if (max_label + 1 > tf.model.num_classes) tf.model.num_classes = max_label + 1;
    }
    an::SplitCorpus split = an::split_corpus(std::move(docs), seed);
    const an::Vocab vocab = an::build_vocab(split.train);
    tf.model.vocab_size = vocab.size();

    an::Model model(tf.model, seed);
    std::unique_ptr<std::ofstream> logf;
    std::ostream* log = &std::cerr;
    if (!train_log.empty()) {
      logf = std::make_unique<std::ofstream>(train_log);
      if (!*logf) throw an::DataError("cannot write " + train_log);
      log = logf.get();
    }
    const an::TrainResult res =
        an::train_model(model, split.train, split.val, vocab, tf.sched, log);

    std::map<std::string, std::string> meta;
    meta["best_epoch"] = std::to_string(res.best_epoch);
    meta["best_min_branch_acc"] = an::detail::fmt(res.best_min_branch_acc);
    meta["epochs_run"] = std::to_string(res.history.size());
    an::save_checkpoint(out_path, model, meta);
    std::ofstream vf(out_path + ".vocab");
    if (!vf) throw an::DataError("cannot write " + out_path + ".vocab");
    an::write_vocab(vf, vocab);
    *log << "saved " << out_path << " (best epoch " << res.best_epoch << ", min branch acc "
         << res.best_min_branch_acc << ")\n";
  });

  // localize-text
  auto* loc_cmd = app.add_subcommand("localize-text", "recover evidence spans for documents");
  std::string loc_ckpt, loc_corpus, loc_vocab;
  loc_cmd->add_option("--ckpt", loc_ckpt, "model checkpoint")->required();
  loc_cmd->add_option("--corpus", loc_corpus, "labeled corpus")->required();
  loc_cmd->add_option("--vocab", loc_vocab, "vocabulary file (default: CKPT.vocab)");
  loc_cmd->callback([&] {
    Sink sink(out_path);
    an::Model model = load_model(loc_ckpt);
    const an::Vocab vocab = load_vocab_for(loc_ckpt, loc_vocab);
    const auto docs = an::load_corpus(loc_corpus);
    const auto recs = an::localize_documents(model, docs, vocab);
    an::write_records(sink.out(), recs);
  });

  // classify-patches
  auto* cls_cmd = app.add_subcommand("classify-patches",
                                     "classify each recovered span with the downstream model");
  std::string cls_ckpt, cls_corpus, cls_vocab;
  cls_cmd->add_option("--ckpt", cls_ckpt, "model checkpoint")->required();
  cls_cmd->add_option("--corpus", cls_corpus, "labeled corpus")->required();
  cls_cmd->add_option("--vocab", cls_vocab, "vocabulary file (default: CKPT.vocab)");
  cls_cmd->callback([&] {
    Sink sink(out_path);
    an::Model model = load_model(cls_ckpt);
    const an::Vocab vocab = load_vocab_for(cls_ckpt, cls_vocab);
    const auto docs = an::load_corpus(cls_corpus);
    const auto recs =
        an::classify_patches(model, docs, vocab, an::model_as_downstream(model));
    an::write_records(sink.out(), recs);
    size_t hits = 0;
    for (const an::LocalizationRecord& r : recs)
      if (r.label >= 0 && r.y == static_cast<size_t>(r.label)) ++hits;
    sink.out() << "# downstream_accuracy "
               << static_cast<double>(hits) / static_cast<double>(recs.size()) << "\n";
  });

  // grad-check
  auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference check of model gradients");
  int gc_configs = 5;
  double gc_eps = 1e-5;
  double gc_tol = 1e-4;
  gc_cmd->add_option("--configs", gc_configs, "number of random configurations");
  gc_cmd->add_option("--eps", gc_eps, "finite-difference step");
  gc_cmd->add_option("--tol", gc_tol, "max relative error tolerated");
  gc_cmd->callback([&] {
    Sink sink(out_path);
    an::Rng rng(seed);
    double worst = 0.0;
    for (int i = 0; i < gc_configs; ++i) {
      an::ModelConfig cfg;
      cfg.vocab_size = 12;
      cfg.embed_dim = 2 + size_t(rng.uniform_int(0, 3));
      cfg.head_mid = 2 + size_t(rng.uniform_int(0, 2));
      cfg.head_out = 2 + size_t(rng.uniform_int(0, 3));
      cfg.branch_filters = 3 + size_t(rng.uniform_int(0, 3));
      cfg.attn_dim = 2 + size_t(rng.uniform_int(0, 2));
      cfg.num_classes = 2 + size_t(rng.uniform_int(0, 2));
      cfg.seq_len = 8 + size_t(rng.uniform_int(0, 4));
      cfg.kernels = {2 + int(rng.uniform_int(0, 1)), 3 + int(rng.uniform_int(0, 2))};
      cfg.aux_weight = rng.uniform(0.05, 0.5);
      an::Model model(cfg, rng.next_u64());
      // Freshly built models hold zero biases, which parks relu pre-activations
      // exactly on the kink where one-sided differences and the subgradient
      // disagree. Jitter every parameter so the check runs at a generic point.
      for (an::Param* p : model.params())
        for (double& v : p->value.data) v += rng.uniform(-0.02, 0.02);
      std::vector<int> ids(cfg.seq_len);
      for (int& id : ids) id = int(rng.uniform_int(0, int64_t(cfg.vocab_size) - 1));
      const size_t label = size_t(rng.uniform_int(0, int64_t(cfg.num_classes) - 1));
      auto build = [&](an::Tape& t) {
        an::ForwardVars fv = model.forward(t, ids);
        return model.total_loss(t, fv, label);
      };
      std::vector<an::Param*> params = model.params();
      const double err = an::grad_check(build, params, gc_eps, 12, rng.next_u64());
      sink.out() << "config " << i << " max_rel_err " << an::detail::fmt(err) << "\n";
      worst = std::max(worst, err);
    }
    sink.out() << "worst " << an::detail::fmt(worst) << "\n";
    if (worst > gc_tol)
      throw an::NumericalError("gradient check failed: " + an::detail::fmt(worst) + " > " +
                               an::detail::fmt(gc_tol));
  });

  // fgsm-eval
  auto* fg_cmd = app.add_subcommand("fgsm-eval", "loss/accuracy under a sign attack");
  std::string fg_ckpt, fg_corpus, fg_vocab;
  double fg_eps = 0.2;
  fg_cmd->add_option("--ckpt", fg_ckpt, "model checkpoint")->required();
  fg_cmd->add_option("--corpus", fg_corpus, "labeled corpus")->required();
  fg_cmd->add_option("--vocab", fg_vocab, "vocabulary file (default: CKPT.vocab)");
  fg_cmd->add_option("--eps", fg_eps, "perturbation size");
  fg_cmd->callback([&] {
    Sink sink(out_path);
    an::Model model = load_model(fg_ckpt);
    const an::Vocab vocab = load_vocab_for(fg_ckpt, fg_vocab);
    const auto docs = an::load_corpus(fg_corpus);
    const an::FgsmReport rep = an::fgsm_eval(model, docs, vocab, fg_eps);
    sink.out() << std::setprecision(6);
    sink.out() << "eps " << rep.eps << "\n";
    sink.out() << "clean loss=" << rep.clean_loss << " acc=" << rep.clean_acc << "\n";
    sink.out() << "adversarial loss=" << rep.adv_loss << " acc=" << rep.adv_acc << "\n";
  });

  // Let --seed, --out, and --config appear after the subcommand name too.
  for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const an::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const an::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const an::GeometryError& e) {
    std::cerr << "geometry error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
