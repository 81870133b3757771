// Command-line entry point. Subcommands expose every library capability:
//   describe   per-layer parameter/FLOP report for a preset or config file
//   flops      totals only
//   apf        accuracy-per-FLOP from literals, the built-in survey, or JSON
//   infer      forward pass on a PPM image or a random batch
//   train-toy  train a tiny model on the synthetic separable dataset
//   distill    same, against a trained (or loaded) teacher
//   gradcheck  finite-difference verification of the autodiff engine
//   ablate     structural cost matrix over the FFN design grid
//   checkpoint inspect or verify a weight file
//
// Exit codes: 0 success, 2 usage/config error, 3 data/format error,
// 4 numerical failure.

#include <atomic>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvit/analytics.hpp"
#include "cvit/checkpoint.hpp"
#include "cvit/model.hpp"
#include "cvit/ppm.hpp"
#include "cvit/train.hpp"
#include "cvit/verification.hpp"

namespace {

using nlohmann::json;

struct GlobalFlags {
  std::uint64_t seed = 1;
  std::string format = "table";
  unsigned threads = 1;
};

// Model selection shared by the subcommands that build a network.
struct ModelFlags {
  std::string preset;
  std::string config_path;
  std::size_t classes = 0;     // 0 = keep config value
  std::size_t image_size = 0;  // 0 = keep config value
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
  auto* p = cmd->add_option("--preset", mf.preset,
                            "named preset (see `describe --list`)");
  auto* c = cmd->add_option("--config", mf.config_path, "config JSON file");
  p->excludes(c);
  cmd->add_option("--classes", mf.classes, "override the class count");
  cmd->add_option("--input", mf.image_size, "override the input resolution");
}

cvit::ModelConfig resolve_config(const ModelFlags& mf,
                                 const std::string& fallback_preset) {
  cvit::ModelConfig cfg;
  if (!mf.config_path.empty()) {
    cfg = cvit::ModelConfig::from_json_file(mf.config_path);
  } else {
    cfg = cvit::ModelConfig::preset(mf.preset.empty() ? fallback_preset
                                                      : mf.preset);
  }
  if (mf.classes) cfg.num_classes = mf.classes;
  if (mf.image_size) cfg.image_size = mf.image_size;
  cfg.validate();
  return cfg;
}

std::string config_line(const cvit::ModelConfig& cfg) {
  return json::parse(cfg.to_json()).dump();
}

// Every run prints the configuration it resolved to, so logs are auditable.
void print_config(const cvit::ModelConfig& cfg) {
  std::cout << "# config " << config_line(cfg) << "\n";
}

int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const cvit::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const cvit::FormatError& e) {  // covers truncated/shape errors
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const cvit::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

// ---------------------------------------------------------------------------
// describe / flops
// ---------------------------------------------------------------------------

void render_report(const cvit::CostReport& report, const GlobalFlags& g,
                   bool doubled) {
  if (g.format == "csv")
    std::cout << cvit::report_to_csv(report, doubled);
  else if (g.format == "json")
    std::cout << cvit::report_to_json(report, doubled) << "\n";
  else
    std::cout << cvit::report_to_table(report, doubled);
}

void cmd_describe(const GlobalFlags& g, const ModelFlags& mf,
                  const std::string& compare_to, bool doubled, bool list) {
  if (list) {
    for (const auto& name : cvit::ModelConfig::preset_names())
      std::cout << name << "\n";
    return;
  }
  auto cfg = resolve_config(mf, "cvit-m");
  print_config(cfg);
  cvit::CViTModel model(cfg, g.seed);
  auto report = cvit::cost_report(model);
  render_report(report, g, doubled);
  if (g.format == "table")
    std::cout << "apf: n/a at desk scale (feed measured top-1 into `apf`)\n";
  if (!compare_to.empty()) {
    ModelFlags base_mf;
    base_mf.preset = compare_to;
    if (compare_to.find('.') != std::string::npos) {
      base_mf.preset.clear();
      base_mf.config_path = compare_to;
    }
    auto base_cfg = resolve_config(base_mf, "");
    cvit::CViTModel base(base_cfg, g.seed);
    auto cmp = cvit::compare_costs(cvit::cost_report(base), report);
    std::ostringstream line;
    line.precision(2);
    line << std::fixed << "reduction vs " << base_cfg.name << ": params "
         << cmp.param_reduction_pct << "%  flops " << cmp.flop_reduction_pct
         << "%";
    std::cout << line.str() << "\n";
  }
}

void cmd_flops(const GlobalFlags& g, const ModelFlags& mf, bool doubled) {
  auto cfg = resolve_config(mf, "cvit-m");
  print_config(cfg);
  cvit::CViTModel model(cfg, g.seed);
  auto report = cvit::cost_report(model);
  const std::size_t flops = doubled ? 2 * report.flops() : report.flops();
  if (g.format == "json") {
    std::cout << json{{"model", cfg.name},
                      {"params", report.params()},
                      {"buffers", report.buffers()},
                      {"flops", flops},
                      {"mflops", double(flops) / 1e6}}
                     .dump(2)
              << "\n";
  } else if (g.format == "csv") {
    std::cout << "model,params,buffers,flops\n"
              << cfg.name << ',' << report.params() << ','
              << report.buffers() << ',' << flops << "\n";
  } else {
    std::cout << cfg.name << ": params " << report.params() << " ("
              << double(report.params()) / 1e6 << "M), flops " << flops
              << " (" << double(flops) / 1e6 << "M)\n";
  }
}

// ---------------------------------------------------------------------------
// apf
// ---------------------------------------------------------------------------

void cmd_apf(const GlobalFlags& g, double top1, double mflops, bool survey,
             const std::string& file) {
  if (survey) {
    std::cout << (g.format == "json" ? cvit::apf_survey_json() + "\n"
                                     : cvit::apf_survey_table());
    return;
  }
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw cvit::Error("cannot open " + file);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw cvit::FormatError(std::string("apf file is not valid JSON: ") +
                              e.what());
    }
    // A `describe --format json` dump carries one model's compute under
    // "totals"; pair it with --top1 for a single score. A data file carries
    // a "rows" array of {model, top1, mflops} for a whole table.
    if (j.contains("totals")) {
      if (top1 <= 0.0)
        throw cvit::ConfigError(
            "a describe-output file has no accuracy; add --top1");
      const double m = j.at("totals").at("mflops").get<double>();
      std::ostringstream line;
      line.precision(1);
      line << std::fixed << j.value("model", "?") << ": apf(" << top1
           << "% @ " << m << " MFLOPs) = " << cvit::apf_rounded(top1, m);
      std::cout << line.str() << "\n";
      return;
    }
    if (!j.contains("rows") || !j.at("rows").is_array())
      throw cvit::FormatError(
          "apf file needs a \"rows\" array or describe-output \"totals\"");
    std::cout << "model,top1,mflops,apf\n";
    for (const auto& row : j.at("rows")) {
      const std::string model = row.value("model", "?");
      const double t = row.at("top1").get<double>();
      const double m = row.at("mflops").get<double>();
      std::ostringstream line;
      line.precision(1);
      line << std::fixed << model << ',' << t << ',' << m << ','
           << cvit::apf_rounded(t, m);
      std::cout << line.str() << "\n";
    }
    return;
  }
  if (top1 <= 0.0 || top1 > 100.0)
    throw cvit::DomainError("top-1 accuracy must lie in (0, 100], got " +
                            std::to_string(top1));
  if (mflops <= 0.0)
    throw cvit::ConfigError("literal mode needs both --top1 and --mflops");
  const double apf = cvit::apf_score(top1, mflops);
  if (g.format == "json") {
    std::cout << json{{"top1", top1},
                      {"mflops", mflops},
                      {"apf", cvit::apf_rounded(top1, mflops)},
                      {"apf_unrounded", apf}}
                     .dump(2)
              << "\n";
  } else {
    std::ostringstream line;
    line.precision(1);
    line << std::fixed << "apf(" << top1 << "% @ " << mflops
         << " MFLOPs) = " << cvit::apf_rounded(top1, mflops);
    std::cout << line.str() << "\n";
  }
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

// Batch-parallel eval forward: rows are independent, so slicing the batch
// across threads reproduces the single-thread logits bit for bit.
cvit::Tensor forward_parallel(cvit::CViTModel& model, const cvit::Tensor& x,
                              unsigned threads) {
  const std::size_t n = x.dim(0);
  if (threads <= 1 || n <= 1) return model.forward(x, cvit::Mode::eval);
  const std::size_t workers = std::min<std::size_t>(threads, n);
  const std::size_t chunk = 3 * x.dim(2) * x.dim(3);
  std::vector<cvit::Tensor> outputs(workers);
  std::vector<std::thread> pool;
  std::atomic<bool> failed{false};
  std::string error_text;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t lo = w * n / workers, hi = (w + 1) * n / workers;
        std::vector<float> part(x.data().begin() + std::ptrdiff_t(lo * chunk),
                                x.data().begin() + std::ptrdiff_t(hi * chunk));
        auto sub = cvit::Tensor::from_data({hi - lo, 3, x.dim(2), x.dim(3)},
                                           std::move(part));
        outputs[w] = model.forward(sub, cvit::Mode::eval);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        failed = true;
        error_text = e.what();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed) throw cvit::NumericalError(error_text);
  std::vector<float> all;
  for (auto& out : outputs)
    all.insert(all.end(), out.data().begin(), out.data().end());
  return cvit::Tensor::from_data({n, outputs[0].dim(1)}, std::move(all));
}

void cmd_infer(const GlobalFlags& g, const ModelFlags& mf,
               const std::string& checkpoint, const std::string& image,
               bool random, std::size_t batch, std::size_t topk) {
  if (image.empty() && !random)
    throw cvit::ConfigError("infer needs --image or --random");
  auto cfg = resolve_config(mf, "tiny-s");
  print_config(cfg);
  cvit::CViTModel model(cfg, g.seed);
  if (!checkpoint.empty()) {
    auto params = model.parameters();
    cvit::load_checkpoint(checkpoint, params);
  }
  cvit::Tensor x;
  if (random) {
    cvit::RngState rng(g.seed);
    x = cvit::Tensor::zeros({batch, 3, cfg.image_size, cfg.image_size});
    for (auto& v : x.data()) v = float(rng.next_normal());
  } else {
    x = cvit::image_to_tensor(cvit::read_ppm(image), cfg.image_size);
  }
  auto logits = forward_parallel(model, x, g.threads);
  const std::size_t classes = logits.dim(1);
  const std::size_t k = std::min(topk, classes);
  json rows = json::array();
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    const float* row = logits.data().data() + r * classes;
    // Softmax over the row for readable scores.
    float mx = row[0];
    for (std::size_t i = 1; i < classes; ++i) mx = std::max(mx, row[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < classes; ++i)
      denom += std::exp(double(row[i]) - mx);
    std::vector<std::size_t> order(classes);
    for (std::size_t i = 0; i < classes; ++i) order[i] = i;
    std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        return row[a] > row[b];
                      });
    if (g.format == "json") {
      json top = json::array();
      for (std::size_t i = 0; i < k; ++i)
        top.push_back({{"class", order[i]},
                       {"logit", row[order[i]]},
                       {"score", std::exp(double(row[order[i]]) - mx) / denom}});
      rows.push_back({{"row", r}, {"topk", top}});
    } else {
      std::cout << "row " << r << ":";
      for (std::size_t i = 0; i < k; ++i) {
        std::ostringstream cell;
        cell.precision(4);
        cell << std::fixed << " #" << order[i] << " logit "
             << row[order[i]] << " score "
             << std::exp(double(row[order[i]]) - mx) / denom;
        std::cout << cell.str();
      }
      std::cout << "\n";
    }
  }
  if (g.format == "json") std::cout << rows.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// train-toy / distill
// ---------------------------------------------------------------------------

struct TrainFlags {
  std::size_t epochs = 20;
  std::size_t batch = 16;
  double max_lr = 3e-3;
  double min_lr = 1e-5;
  double weight_decay = 1.25e-2;
  std::size_t classes = 2;
  std::size_t train_per_class = 64;
  std::size_t val_per_class = 32;
  double noise = 0.5;
  std::uint64_t data_seed = 1007;
  std::string save_path;
};

void add_train_flags(CLI::App* cmd, TrainFlags& tf) {
  cmd->add_option("--epochs", tf.epochs, "training epochs");
  cmd->add_option("--batch", tf.batch, "batch size");
  cmd->add_option("--max-lr", tf.max_lr, "peak learning rate");
  cmd->add_option("--min-lr", tf.min_lr, "final learning rate");
  cmd->add_option("--weight-decay", tf.weight_decay, "decoupled weight decay");
  cmd->add_option("--data-classes", tf.classes, "toy dataset classes");
  cmd->add_option("--train-per-class", tf.train_per_class,
                  "training samples per class");
  cmd->add_option("--val-per-class", tf.val_per_class,
                  "validation samples per class");
  cmd->add_option("--noise", tf.noise, "per-pixel noise level");
  cmd->add_option("--data-seed", tf.data_seed, "dataset generation seed");
  cmd->add_option("--save", tf.save_path, "write final weights here");
}

cvit::ToyDataset make_dataset(const TrainFlags& tf, std::size_t image_size) {
  cvit::ToyDatasetConfig dc;
  dc.classes = tf.classes;
  dc.train_per_class = tf.train_per_class;
  dc.val_per_class = tf.val_per_class;
  dc.noise = tf.noise;
  dc.image_size = image_size;
  return cvit::ToyDataset(dc, tf.data_seed);
}

cvit::OptimConfig make_optim(const TrainFlags& tf) {
  cvit::OptimConfig oc;
  oc.epochs = tf.epochs;
  oc.batch_size = tf.batch;
  oc.max_lr = tf.max_lr;
  oc.min_lr = tf.min_lr;
  oc.weight_decay = tf.weight_decay;
  return oc;
}

void render_trace(const cvit::TrainTrace& trace, const GlobalFlags& g) {
  if (g.format == "json") {
    std::cout << cvit::trace_to_json(trace) << "\n";
    return;
  }
  std::cout << cvit::trace_to_csv(trace);
}

void cmd_train_toy(const GlobalFlags& g, const ModelFlags& mf,
                   const TrainFlags& tf) {
  auto cfg = resolve_config(mf, "tiny-s");
  cfg.num_classes = mf.classes ? mf.classes : tf.classes;
  cfg.validate();
  print_config(cfg);
  auto data = make_dataset(tf, cfg.image_size);
  cvit::CViTModel model(cfg, g.seed);
  auto trace = cvit::train_loop(model, data, make_optim(tf));
  render_trace(trace, g);
  std::ostringstream last;
  last.precision(4);
  last << std::fixed << "final val_accuracy "
       << trace.epochs.back().val_accuracy;
  std::cout << last.str() << "\n";
  if (!tf.save_path.empty()) {
    auto params = model.parameters();
    cvit::save_checkpoint(tf.save_path, params);
    std::cout << "saved " << tf.save_path << "\n";
  }
}

void cmd_distill(const GlobalFlags& g, const ModelFlags& mf,
                 const TrainFlags& tf, const std::string& teacher_preset,
                 const std::string& teacher_checkpoint, double alpha,
                 double temperature) {
  auto cfg = resolve_config(mf, "tiny-s");
  cfg.num_classes = mf.classes ? mf.classes : tf.classes;
  cfg.validate();
  print_config(cfg);

  auto tcfg = cvit::ModelConfig::preset(teacher_preset);
  tcfg.num_classes = cfg.num_classes;
  tcfg.image_size = cfg.image_size;
  tcfg.validate();
  auto data = make_dataset(tf, cfg.image_size);
  cvit::CViTModel teacher(tcfg, g.seed + 1);
  if (!teacher_checkpoint.empty()) {
    auto tparams = teacher.parameters();
    cvit::load_checkpoint(teacher_checkpoint, tparams);
  } else {
    std::cout << "# training teacher (" << tcfg.name << ")\n";
    cvit::train_loop(teacher, data, make_optim(tf));
  }
  std::ostringstream tline;
  tline.precision(4);
  tline << std::fixed << "teacher val_accuracy "
        << cvit::evaluate(teacher, data);
  std::cout << tline.str() << "\n";

  cvit::CViTModel student(cfg, g.seed);
  cvit::KDParams kd{alpha, temperature};
  auto trace = cvit::train_loop(student, data, make_optim(tf), &teacher, &kd);
  render_trace(trace, g);
  std::ostringstream last;
  last.precision(4);
  last << std::fixed << "final val_accuracy "
       << trace.epochs.back().val_accuracy;
  std::cout << last.str() << "\n";
  if (!tf.save_path.empty()) {
    auto params = student.parameters();
    cvit::save_checkpoint(tf.save_path, params);
    std::cout << "saved " << tf.save_path << "\n";
  }
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

void cmd_gradcheck(const GlobalFlags& g, const std::string& target) {
  bool all_pass = true;
  std::cout << "target,max_rel_err,tolerance,status\n";
  for (auto& c : cvit::standard_gradcheck_cases()) {
    if (target != "all" && target != c.name) continue;
    auto result = c.run(g.seed);
    const bool pass = result.passes(c.tolerance);
    all_pass = all_pass && pass;
    std::ostringstream line;
    line << c.name << ',' << std::scientific << result.max_rel_err << ','
         << c.tolerance << ',' << (pass ? "pass" : "FAIL");
    std::cout << line.str() << "\n";
    if (!pass)
      std::cout << "# worst: " << result.worst_name << "["
                << result.worst_index << "]\n";
  }
  if (!all_pass)
    throw cvit::NumericalError("gradient check failed");
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

std::vector<bool> parse_switches(const std::string& csv) {
  std::vector<bool> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "on")
      out.push_back(true);
    else if (item == "off")
      out.push_back(false);
    else
      throw cvit::ConfigError("switch values are on/off, got \"" + item +
                              "\"");
  }
  return out;
}

// Grid axes arrive as key=value-list tokens: chunks=1,2,4 ratio=2,2.5
// cascade=on,off projection=on,off share=on,off. Unmentioned axes keep the
// base config's setting.
struct AblateGrid {
  std::vector<std::size_t> chunks;
  std::vector<double> ratios;
  std::vector<bool> cascade;
  std::vector<bool> projection;
  std::vector<bool> share;
};

AblateGrid parse_grid(const std::vector<std::string>& tokens,
                      const cvit::ModelConfig& base) {
  AblateGrid grid{{base.ffn_chunks},
                  {base.ffn_expansion},
                  {base.ffn_cascade},
                  {base.ffn_projection},
                  {base.weight_sharing}};
  for (const auto& token : tokens) {
    const auto eq = token.find('=');
    if (eq == std::string::npos)
      throw cvit::ConfigError("grid axis must look like key=v1,v2 — got \"" +
                              token + "\"");
    const std::string key = token.substr(0, eq);
    const std::string values = token.substr(eq + 1);
    if (key == "chunks") {
      grid.chunks.clear();
      for (double v : parse_doubles(values))
        grid.chunks.push_back(std::size_t(v));
    } else if (key == "ratio") {
      grid.ratios = parse_doubles(values);
    } else if (key == "cascade") {
      grid.cascade = parse_switches(values);
    } else if (key == "projection") {
      grid.projection = parse_switches(values);
    } else if (key == "share") {
      grid.share = parse_switches(values);
    } else {
      throw cvit::ConfigError(
          "unknown grid axis \"" + key +
          "\" (want chunks/ratio/cascade/projection/share)");
    }
  }
  return grid;
}

void cmd_ablate(const GlobalFlags& g, const ModelFlags& mf,
                const std::vector<std::string>& grid_tokens,
                std::size_t toy_epochs) {
  auto base = resolve_config(mf, "cvit-m");
  print_config(base);
  const AblateGrid grid = parse_grid(grid_tokens, base);
  const auto& chunk_values = grid.chunks;
  const auto& ratio_values = grid.ratios;
  const auto& cascade_values = grid.cascade;
  const auto& projection_values = grid.projection;
  const auto& share_values = grid.share;

  std::cout << "chunks,ratio,cascade,projection,share,params,unique_params,"
               "mflops,val_acc,note\n";
  for (std::size_t n : chunk_values)
    for (double e : ratio_values)
      for (bool cascade : cascade_values)
        for (bool projection : projection_values)
          for (bool share : share_values) {
            auto cfg = base;
            cfg.ffn_chunks = n;
            cfg.ffn_expansion = e;
            cfg.ffn_cascade = cascade;
            cfg.ffn_projection = projection;
            cfg.weight_sharing = share;
            std::ostringstream row;
            row << n << ',' << e << ',' << (cascade ? "on" : "off") << ','
                << (projection ? "on" : "off") << ','
                << (share ? "on" : "off") << ',';
            try {
              cfg.validate();
              cvit::CViTModel model(cfg, g.seed);
              auto params = model.parameters();
              auto report = cvit::cost_report(model);
              row << report.params() << ','
                  << cvit::unique_param_count(params) << ',';
              std::ostringstream mf_cell;
              mf_cell.precision(1);
              mf_cell << std::fixed << report.mflops();
              row << mf_cell.str() << ',';
              if (toy_epochs > 0) {
                auto toy = cfg;
                toy.name = "toy-" + cfg.name;
                // Shrink to desk scale for optional accuracy columns.
                toy.image_size = 64;
                toy.num_classes = 2;
                toy.widths = {16, 24, 32};
                toy.depths = {1, 1, 1};
                toy.heads = {2, 2, 2};
                toy.validate();
                TrainFlags tf;
                tf.epochs = toy_epochs;
                auto data = make_dataset(tf, 64);
                cvit::CViTModel toy_model(toy, g.seed);
                auto trace =
                    cvit::train_loop(toy_model, data, make_optim(tf));
                std::ostringstream acc;
                acc.precision(3);
                acc << std::fixed << trace.epochs.back().val_accuracy;
                row << acc.str() << ',';
              } else {
                row << "-,";
              }
              row << "ok";
            } catch (const cvit::Error& err) {
              row << "-,-,-,-,invalid: " << err.what();
            }
            std::cout << row.str() << "\n";
          }
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

void cmd_checkpoint(const GlobalFlags& g, const ModelFlags& mf,
                    const std::string& inspect_path,
                    const std::string& verify_path) {
  if (inspect_path.empty() && verify_path.empty())
    throw cvit::ConfigError("checkpoint needs --inspect or --verify");
  if (!inspect_path.empty()) {
    auto entries = cvit::inspect_checkpoint(inspect_path);
    std::cout << "name,shape,payload\n";
    for (const auto& e : entries)
      std::cout << e.name << ',' << cvit::shape_str(e.shape) << ','
                << (e.alias_of.empty() ? std::string("raw")
                                       : "alias of " + e.alias_of)
                << "\n";
    std::cout << "# " << entries.size() << " tensors\n";
  }
  if (!verify_path.empty()) {
    auto cfg = resolve_config(mf, "tiny-s");
    print_config(cfg);
    cvit::CViTModel model(cfg, g.seed);
    auto params = model.parameters();
    cvit::load_checkpoint(verify_path, params);
    std::cout << "checkpoint matches the config (" << params.size()
              << " tensors loaded)\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"verifiable chunked-FFN vision transformer toolkit"};
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--seed", g.seed, "global RNG seed")->capture_default_str();
  app.add_option("--format", g.format, "output format")
      ->check(CLI::IsMember({"table", "csv", "json"}))
      ->capture_default_str();
  app.add_option("--threads", g.threads, "batch-parallel inference threads")
      ->capture_default_str();

  // describe
  auto* describe = app.add_subcommand("describe", "per-layer cost report");
  ModelFlags describe_mf;
  add_model_flags(describe, describe_mf);
  std::string compare_to;
  bool describe_doubled = false, describe_list = false;
  describe->add_option("--compare-to", compare_to,
                       "also print reduction vs this preset/config");
  describe->add_flag("--doubled-flops", describe_doubled,
                     "count a multiply-add as 2 FLOPs");
  describe->add_flag("--list", describe_list, "list preset names and exit");

  // flops
  auto* flops = app.add_subcommand("flops", "parameter/FLOP totals");
  ModelFlags flops_mf;
  add_model_flags(flops, flops_mf);
  bool flops_doubled = false;
  flops->add_flag("--doubled-flops", flops_doubled,
                  "count a multiply-add as 2 FLOPs");

  // apf
  auto* apf = app.add_subcommand("apf", "accuracy per FLOP");
  double apf_top1 = 0.0, apf_mflops = 0.0;
  bool apf_survey = false;
  std::string apf_file;
  apf->add_option("--top1", apf_top1, "top-1 accuracy percent");
  apf->add_option("--mflops", apf_mflops, "compute in MFLOPs");
  apf->add_flag("--survey", apf_survey, "print the built-in survey table");
  apf->add_option("--file", apf_file,
                  "JSON: a {model,top1,mflops} rows table or describe output");

  // infer
  auto* infer = app.add_subcommand("infer", "forward pass");
  ModelFlags infer_mf;
  add_model_flags(infer, infer_mf);
  std::string infer_checkpoint, infer_image;
  bool infer_random = false;
  std::size_t infer_batch = 1, infer_topk = 5;
  infer->add_option("--checkpoint", infer_checkpoint, "weights to load");
  infer->add_option("--image", infer_image, "binary PPM (P6) input");
  infer->add_flag("--random", infer_random, "use a seeded random batch");
  infer->add_option("--batch", infer_batch, "random batch size");
  infer->add_option("--topk", infer_topk, "classes to print per row");

  // train-toy
  auto* train = app.add_subcommand("train-toy", "train on the synthetic set");
  ModelFlags train_mf;
  add_model_flags(train, train_mf);
  TrainFlags train_tf;
  add_train_flags(train, train_tf);

  // distill
  auto* distill = app.add_subcommand("distill", "knowledge distillation");
  ModelFlags distill_mf;
  add_model_flags(distill, distill_mf);
  TrainFlags distill_tf;
  add_train_flags(distill, distill_tf);
  std::string teacher_preset = "tiny-l", teacher_checkpoint;
  double kd_alpha = 0.5, kd_temperature = 2.0;
  distill->add_option("--teacher-preset", teacher_preset, "teacher model")
      ->capture_default_str();
  distill->add_option("--teacher-checkpoint", teacher_checkpoint,
                      "pre-trained teacher weights (otherwise trained now)");
  distill->add_option("--alpha", kd_alpha, "distillation loss weight")
      ->capture_default_str();
  distill->add_option("--temperature", kd_temperature, "softmax temperature")
      ->capture_default_str();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit");
  std::string gradcheck_target = "all";
  gradcheck
      ->add_option("--target", gradcheck_target,
                   "one of all/linear/conv/ccffn/cga/block/kd")
      ->check(CLI::IsMember(
          {"all", "linear", "conv", "ccffn", "cga", "block", "kd"}))
      ->capture_default_str();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "FFN design-grid cost matrix");
  ModelFlags ablate_mf;
  add_model_flags(ablate, ablate_mf);
  std::vector<std::string> ablate_grid;
  std::size_t ablate_toy_epochs = 0;
  ablate
      ->add_option("--grid", ablate_grid,
                   "axes as key=list, e.g. chunks=1,2,4 ratio=2,2.5,4 "
                   "cascade=on,off projection=on,off share=on,off")
      ->take_all();
  ablate->add_option("--toy-epochs", ablate_toy_epochs,
                     "also train a desk-scale variant per row");

  // checkpoint
  auto* checkpoint = app.add_subcommand("checkpoint", "inspect/verify weights");
  ModelFlags checkpoint_mf;
  add_model_flags(checkpoint, checkpoint_mf);
  std::string ckpt_inspect, ckpt_verify;
  checkpoint->add_option("--inspect", ckpt_inspect, "list file contents");
  checkpoint->add_option("--verify", ckpt_verify,
                         "load against --preset/--config");

  // Global flags (--seed/--format/--threads) are accepted after a subcommand
  // name too: unmatched subcommand options fall through to the main app.
  for (auto* sub : app.get_subcommands(/*filter=*/[](const CLI::App*) {
         return true;
       }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors map to exit 2
  }

  return guarded([&] {
    if (describe->parsed())
      cmd_describe(g, describe_mf, compare_to, describe_doubled,
                   describe_list);
    else if (flops->parsed())
      cmd_flops(g, flops_mf, flops_doubled);
    else if (apf->parsed())
      cmd_apf(g, apf_top1, apf_mflops, apf_survey, apf_file);
    else if (infer->parsed())
      cmd_infer(g, infer_mf, infer_checkpoint, infer_image, infer_random,
                infer_batch, infer_topk);
    else if (train->parsed())
      cmd_train_toy(g, train_mf, train_tf);
    else if (distill->parsed())
      cmd_distill(g, distill_mf, distill_tf, teacher_preset,
                  teacher_checkpoint, kd_alpha, kd_temperature);
    else if (gradcheck->parsed())
      cmd_gradcheck(g, gradcheck_target);
    else if (ablate->parsed())
      cmd_ablate(g, ablate_mf, ablate_grid, ablate_toy_epochs);
    else if (checkpoint->parsed())
      cmd_checkpoint(g, checkpoint_mf, ckpt_inspect, ckpt_verify);
  });
}
