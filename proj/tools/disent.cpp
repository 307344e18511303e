// Command-line entry point for the whole workflow: dataset generation,
// adversarial training with an optional orthogonality penalty, closed-form
// and learned direction analysis, metric evaluation, and traversal rendering.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <zlib.h>

#include "disent/checkpoint.hpp"
#include "disent/config.hpp"
#include "disent/discovery.hpp"
#include "disent/metrics.hpp"
#include "disent/models.hpp"
#include "disent/png.hpp"
#include "disent/sefa.hpp"
#include "disent/sprites.hpp"
#include "disent/training.hpp"
#include "disent/version.hpp"

namespace fs = std::filesystem;
using namespace disent;

namespace {

// ---------------------------------------------------------------------------
// Artifact plumbing
// ---------------------------------------------------------------------------

void atomic_write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void atomic_write_text(const fs::path& path, const std::string& text) {
  atomic_write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string crc32_hex(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingInputError("cannot read " + path.string());
  uLong crc = crc32(0L, Z_NULL, 0);
  char buf[65536];
  while (f.read(buf, sizeof buf) || f.gcount() > 0) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(f.gcount()));
  }
  char out[16];
  std::snprintf(out, sizeof out, "%08lx", static_cast<unsigned long>(crc));
  return out;
}

void require_input(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " must be set in the config");
  if (!fs::exists(path)) throw MissingInputError(what + " not found: " + path);
}

fs::path resolve_out_dir(const std::string& out_dir) {
  fs::path p(out_dir);
  if (const char* root = std::getenv("DISENT_OUT_ROOT"); root && *root && p.is_relative()) {
    p = fs::path(root) / p;
  }
  fs::create_directories(p);
  return p;
}

// Resolved config + provenance (tool version, seed, input checksums): enough
// to re-run the command bit-identically.
void write_manifest(const fs::path& dir, const std::string& command, const json& resolved,
                    const std::vector<std::string>& input_paths) {
  atomic_write_text(dir / "config.json", resolved.dump(2) + "\n");
  json inputs = json::object();
  for (const auto& p : input_paths) {
    inputs[p] = {{"crc32", crc32_hex(p)}, {"bytes", fs::file_size(p)}};
  }
  json manifest{{"command", command},
                {"tool_version", version_string},
                {"seed", resolved.at("seed")},
                {"config", resolved},
                {"input_checksums", inputs}};
  atomic_write_text(dir / "run.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Rendering helpers
// ---------------------------------------------------------------------------

// Assembles row-major cells (each res x res, values in [0,1]) into one
// grayscale PNG grid.
void write_image_grid(const fs::path& path, const std::vector<std::vector<float>>& cells,
                      std::int64_t rows, std::int64_t cols, std::int64_t res) {
  std::vector<float> canvas(static_cast<std::size_t>(rows * res * cols * res), 0.0f);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      const auto& cell = cells[static_cast<std::size_t>(r * cols + c)];
      for (std::int64_t y = 0; y < res; ++y) {
        for (std::int64_t x = 0; x < res; ++x) {
          canvas[static_cast<std::size_t>((r * res + y) * cols * res + c * res + x)] =
              cell[static_cast<std::size_t>(y * res + x)];
        }
      }
    }
  }
  atomic_write_bytes(path, encode_gray_png(cols * res, rows * res, to_gray_bytes(canvas)));
}

std::vector<float> frame_of(const Tensor<float>& batch, std::int64_t row, std::int64_t px) {
  const auto& v = batch.value();
  return std::vector<float>(v.begin() + row * px, v.begin() + (row + 1) * px);
}

std::vector<float> base_latent(std::uint64_t seed, std::int64_t m) {
  Rng rng(Rng::mix(seed, 0x7A));
  std::vector<float> z(static_cast<std::size_t>(m));
  for (auto& v : z) v = static_cast<float>(rng.normal());
  return z;
}

// Axis-sweep grid: row i sweeps coordinate z_i over [-range, range] while the
// other coordinates stay at the shared base latent.
void write_axis_traversal(Generator<float>& g, const fs::path& path, std::uint64_t seed,
                          std::int64_t steps, double range) {
  std::int64_t m = g.config().latent_dim, res = g.config().resolution;
  auto base = base_latent(seed, m);
  std::vector<float> zrows(static_cast<std::size_t>(m * steps * m));
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t s = 0; s < steps; ++s) {
      float* row = zrows.data() + (i * steps + s) * m;
      std::copy(base.begin(), base.end(), row);
      row[i] = static_cast<float>(-range + 2.0 * range * static_cast<double>(s) /
                                               static_cast<double>(steps - 1));
    }
  }
  NoGradGuard ng;
  auto out = g.forward(Tensor<float>::from_data({m * steps, m}, zrows), false);
  std::vector<std::vector<float>> cells;
  for (std::int64_t r = 0; r < m * steps; ++r) cells.push_back(frame_of(out, r, res * res));
  write_image_grid(path, cells, m, steps, res);
}

// One direction as a 1 x steps strip of additive edits around the base.
void write_direction_strip(Generator<float>& g, const fs::path& path,
                           const std::vector<float>& direction, std::uint64_t seed,
                           std::int64_t steps, double range) {
  std::int64_t res = g.config().resolution;
  auto base = base_latent(seed, g.config().latent_dim);
  auto frames = traverse_direction(g, base, direction, static_cast<float>(-range),
                                   static_cast<float>(range), steps);
  std::vector<std::vector<float>> cells;
  for (std::int64_t s = 0; s < steps; ++s) cells.push_back(frame_of(frames, s, res * res));
  write_image_grid(path, cells, 1, steps, res);
}

// Analysis commands read cfg.checkpoint, falling back to the checkpoint the
// train command writes into the output directory.
std::string resolve_checkpoint(const ExperimentConfig& cfg) {
  std::string path = cfg.checkpoint.empty()
                         ? (resolve_out_dir(cfg.out_dir) / "checkpoint.bin").string()
                         : cfg.checkpoint;
  if (!fs::exists(path)) throw MissingInputError("checkpoint not found: " + path);
  return path;
}

Generator<float> load_generator(const ExperimentConfig& cfg, const std::string& ckpt_path) {
  Generator<float> g(cfg.model);
  auto cp = load_checkpoint_file(ckpt_path);
  load_model_state<float>(g, cp);
  return g;
}

std::string csv_join(const std::vector<float>& row) {
  std::ostringstream os;
  os.precision(9);
  for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
  return os.str();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_make_data(const ExperimentConfig& cfg, const json& resolved) {
  fs::path out = resolve_out_dir(cfg.out_dir);
  write_manifest(out, "make-data", resolved, {});

  Dataset ds;
  ds.resolution = cfg.data_resolution;
  ds.samples = sample_batch(cfg.data_seed, cfg.data_count, cfg.data_resolution);

  fs::path data_path = out / "dataset.dfac";
  fs::path tmp = data_path;
  tmp += ".tmp";
  save_dataset(tmp.string(), ds);
  fs::rename(tmp, data_path);

  std::int64_t n = std::min<std::int64_t>(64, cfg.data_count);
  std::int64_t cols = 8, rows = (n + cols - 1) / cols;
  std::vector<std::vector<float>> cells;
  for (std::int64_t i = 0; i < rows * cols; ++i) {
    if (i < n) {
      cells.push_back(ds.samples[static_cast<std::size_t>(i)].image);
    } else {
      cells.emplace_back(static_cast<std::size_t>(ds.resolution * ds.resolution), 0.0f);
    }
  }
  write_image_grid(out / "contact_sheet.png", cells, rows, cols, ds.resolution);

  std::cout << "wrote " << data_path.string() << " (" << cfg.data_count << " samples at "
            << cfg.data_resolution << "x" << cfg.data_resolution << ")\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const json& resolved, bool resume) {
  require_input(cfg.data_path, "data.path");
  fs::path out = resolve_out_dir(cfg.out_dir);
  write_manifest(out, "train", resolved, {cfg.data_path});

  Dataset ds = load_dataset(cfg.data_path);
  Trainer<float> trainer(cfg.train, ds);

  fs::path ckpt = out / "checkpoint.bin";
  if (resume && fs::exists(ckpt)) {
    trainer.load_checkpoint(ckpt.string());
    std::cout << "resumed from " << ckpt.string() << " at iteration " << trainer.iter() << "\n";
  }

  TrainHooks hooks;
  hooks.on_eval = [&](std::int64_t it) {
    const auto& r = trainer.log().records.back();
    std::cout << "iter " << it << "  d_loss " << r.d_loss << "  g_adv " << r.g_adv
              << "  penalty " << r.penalty_total << "\n";
    write_axis_traversal(trainer.generator(), out / ("traverse_" + std::to_string(it) + ".png"),
                         cfg.seed, cfg.traverse_steps, cfg.traverse_range);
  };
  hooks.on_checkpoint = [&](std::int64_t) {
    trainer.save_checkpoint(ckpt.string());
    trainer.log().save_csv((out / "log.csv").string());
  };
  trainer.train(hooks);

  trainer.save_checkpoint(ckpt.string());
  trainer.log().save_csv((out / "log.csv").string());
  write_axis_traversal(trainer.generator(), out / "traverse_final.png", cfg.seed,
                       cfg.traverse_steps, cfg.traverse_range);
  std::cout << "finished " << trainer.iter() << " iterations; checkpoint at " << ckpt.string()
            << "\n";
  return 0;
}

int cmd_sefa(const ExperimentConfig& cfg, const json& resolved) {
  std::string ckpt_path = resolve_checkpoint(cfg);
  auto g = load_generator(cfg, ckpt_path);
  fs::path out = resolve_out_dir(cfg.out_dir);
  write_manifest(out, "sefa", resolved, {ckpt_path});

  auto res = sefa_directions(g);
  if (!res.warning.empty()) std::cerr << "warning: " << res.warning << "\n";

  // One column per direction; the header row carries the singular values.
  std::ostringstream csv;
  csv.precision(9);
  csv << csv_join(res.sigma) << "\n";
  for (std::int64_t r = 0; r < res.m; ++r) {
    for (std::int64_t j = 0; j < res.m; ++j) {
      csv << (j ? "," : "") << res.v[static_cast<std::size_t>(r * res.m + j)];
    }
    csv << "\n";
  }
  atomic_write_text(out / "sefa.csv", csv.str());

  std::vector<std::vector<float>> zs;
  Rng rng(Rng::mix(cfg.seed, 0x5EFA));
  for (int i = 0; i < 16; ++i) {
    std::vector<float> z(static_cast<std::size_t>(g.config().latent_dim));
    for (auto& v : z) v = static_cast<float>(rng.normal());
    zs.push_back(std::move(z));
  }
  auto prop = verify_proposition(g, zs);
  json report{{"sigma", res.sigma},
              {"degenerate_sigma", res.near_zero},
              {"warning", res.warning},
              {"proposition_max_equivalence_error", prop.max_equivalence_error},
              {"proposition_max_offdiag", prop.max_offdiag}};
  atomic_write_text(out / "sefa_report.json", report.dump(2) + "\n");

  for (std::int64_t j = 0; j < res.m; ++j) {
    write_direction_strip(g, out / ("sefa_dir" + std::to_string(j) + ".png"), res.direction(j),
                          cfg.seed, cfg.traverse_steps, cfg.traverse_range);
  }
  std::cout << "wrote " << (out / "sefa.csv").string() << " and " << res.m
            << " traversal strips\n";
  return 0;
}

int cmd_discover(const ExperimentConfig& cfg, const json& resolved) {
  std::string ckpt_path = resolve_checkpoint(cfg);
  auto g = load_generator(cfg, ckpt_path);
  fs::path out = resolve_out_dir(cfg.out_dir);
  write_manifest(out, "discover", resolved, {ckpt_path});

  Rng rng(Rng::mix(cfg.seed, 0xD15C));
  auto dres = discover(g, cfg.discover_config(), rng);
  std::int64_t m = dres.a.shape()[0], n_dirs = dres.a.shape()[1];

  std::ostringstream csv;
  csv.precision(9);
  for (std::int64_t j = 0; j < n_dirs; ++j) csv << (j ? "," : "") << "dir_" << j;
  csv << "\n";
  const auto& av = dres.a.value();
  for (std::int64_t r = 0; r < m; ++r) {
    for (std::int64_t j = 0; j < n_dirs; ++j) {
      csv << (j ? "," : "") << av[static_cast<std::size_t>(r * n_dirs + j)];
    }
    csv << "\n";
  }
  atomic_write_text(out / "directions.csv", csv.str());

  std::ostringstream hist;
  hist << "step,penalty\n";
  hist.precision(9);
  for (std::size_t i = 0; i < dres.penalty_history.size(); ++i) {
    hist << (i + 1) << "," << dres.penalty_history[i] << "\n";
  }
  atomic_write_text(out / "history.csv", hist.str());

  for (std::int64_t j = 0; j < n_dirs; ++j) {
    std::vector<float> dir(static_cast<std::size_t>(m));
    for (std::int64_t r = 0; r < m; ++r) dir[static_cast<std::size_t>(r)] =
        av[static_cast<std::size_t>(r * n_dirs + j)];
    write_direction_strip(g, out / ("discover_dir" + std::to_string(j) + ".png"), dir, cfg.seed,
                          cfg.traverse_steps, cfg.traverse_range);
  }
  std::cout << "wrote " << n_dirs << " directions (orthonormality error " << dres.max_orth_err
            << ")\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const json& resolved) {
  std::string ckpt_path = resolve_checkpoint(cfg);
  auto g = load_generator(cfg, ckpt_path);
  fs::path out = resolve_out_dir(cfg.out_dir);
  write_manifest(out, "eval", resolved, {ckpt_path});

  auto rep = evaluate_generator<float>(g, cfg.metrics);
  atomic_write_text(out / "metrics.json", rep.to_json());

  std::ostringstream csv;
  csv.precision(9);
  csv << "vp_accuracy,vp_std,path_length_pixel";
  for (std::size_t i = 0; i < rep.activeness.size(); ++i) csv << ",activeness_" << i;
  csv << "\n" << rep.vp_accuracy << "," << rep.vp_std << "," << rep.path_length;
  for (double a : rep.activeness) csv << "," << a;
  csv << "\n";
  atomic_write_text(out / "metrics.csv", csv.str());

  std::ostringstream act;
  act << "dimension,activeness\n";
  act.precision(9);
  for (std::size_t i = 0; i < rep.activeness.size(); ++i) {
    act << i << "," << rep.activeness[i] << "\n";
  }
  atomic_write_text(out / "activeness.csv", act.str());

  std::cout << "vp " << rep.vp_accuracy << " +- " << rep.vp_std << ", path length (pixel) "
            << rep.path_length << "\n";
  return 0;
}

int cmd_traverse(const ExperimentConfig& cfg, const json& resolved) {
  std::string ckpt_path = resolve_checkpoint(cfg);
  auto g = load_generator(cfg, ckpt_path);
  fs::path out = resolve_out_dir(cfg.out_dir);
  write_manifest(out, "traverse", resolved, {ckpt_path});
  write_axis_traversal(g, out / "traverse.png", cfg.seed, cfg.traverse_steps, cfg.traverse_range);
  std::cout << "wrote " << (out / "traverse.png").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"disent: disentanglement lab (dataset, GAN training with Jacobian "
               "orthogonality penalties, direction analysis, metrics)"};
  app.set_version_flag("--version", version_string);
  app.require_subcommand(1);
  app.footer("Config keys (key = default), settable in the JSON config or as key=value "
             "overrides:\n" +
             config_key_reference());

  std::string config_path;
  std::vector<std::string> overrides;
  bool resume = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON config file");
    sub->add_option("overrides", overrides, "dotted key=value config overrides");
  };
  add_common(app.add_subcommand("make-data", "render a sprite dataset with ground-truth factors"));
  auto* train_cmd = app.add_subcommand("train", "train the GAN per config");
  add_common(train_cmd);
  train_cmd->add_flag("--resume", resume, "continue from <out_dir>/checkpoint.bin if present");
  add_common(app.add_subcommand("sefa", "closed-form directions from the first-layer weight"));
  add_common(app.add_subcommand("discover", "learn an orthonormal direction matrix"));
  add_common(app.add_subcommand("eval", "compute metrics for a checkpoint"));
  add_common(app.add_subcommand("traverse", "render a latent axis traversal grid"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  }

  try {
    json resolved = resolve_config(config_path, overrides);
    auto cfg = typed_config(resolved);
    if (app.got_subcommand("make-data")) return cmd_make_data(cfg, resolved);
    if (app.got_subcommand("train")) return cmd_train(cfg, resolved, resume);
    if (app.got_subcommand("sefa")) return cmd_sefa(cfg, resolved);
    if (app.got_subcommand("discover")) return cmd_discover(cfg, resolved);
    if (app.got_subcommand("eval")) return cmd_eval(cfg, resolved);
    if (app.got_subcommand("traverse")) return cmd_traverse(cfg, resolved);
    std::cerr << "error: config: no command\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const MissingInputError& e) {
    std::cerr << "error: missing-input: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 4;
  }
}
