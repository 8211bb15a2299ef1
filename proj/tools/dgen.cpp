#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dyngen/inference.hpp"
#include "dyngen/io.hpp"
#include "dyngen/model.hpp"
#include "dyngen/oracle.hpp"
#include "dyngen/trainer.hpp"

namespace fs = std::filesystem;
using namespace dyngen;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kConfigError = 2;
constexpr int kDataError = 3;

std::size_t resolve_threads(std::size_t flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("DGEN_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

void check_checkpoint_matches(const Model& model, const io::RunConfig& rc) {
  const ModelConfig& a = model.cfg;
  const ModelConfig& b = rc.model;
  if (a.d_state != b.d_state || a.d_noise != b.d_noise ||
      a.d_appearance != b.d_appearance || a.d_motion != b.d_motion ||
      a.frame_h != b.frame_h || a.frame_w != b.frame_w ||
      a.frame_c != b.frame_c)
    throw data_error("checkpoint dimensions do not match the configuration");
}

void write_sequence_outputs(const std::string& dgsq_path,
                            const FrameSequence& X) {
  io::write_dgsq(dgsq_path, X);
  fs::path p(dgsq_path);
  io::dump_frames((p.parent_path() / (p.stem().string() + "_frames")).string(),
                  X);
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> data;
  std::vector<std::string> masks;
  std::string out;
  std::size_t threads = 0;
};

int run_train(const TrainArgs& args) {
  io::RunConfig rc = io::load_run_config(args.config);
  rc.train.threads = resolve_threads(args.threads);

  // Masks, when given, pair with the data files by filename stem.
  std::map<std::string, std::string> mask_by_stem;
  for (const auto& m : args.masks) {
    std::string stem = fs::path(m).stem().string();
    if (mask_by_stem.count(stem))
      throw data_error("duplicate mask stem: " + stem);
    mask_by_stem[stem] = m;
  }

  std::vector<TrainSequence> dataset;
  for (const auto& f : args.data) {
    TrainSequence seq;
    seq.X = io::read_dgsq(f);
    if (!args.masks.empty()) {
      std::string stem = fs::path(f).stem().string();
      auto it = mask_by_stem.find(stem);
      if (it == mask_by_stem.end())
        throw data_error("no mask matches data file stem '" + stem + "'");
      seq.mask = io::read_dgmk(it->second);
      if (!seq.mask->same_shape(seq.X))
        throw data_error(it->second + ": mask dimensions do not match " + f);
    }
    dataset.push_back(std::move(seq));
  }

  TrainState state = train(dataset, rc.train, rc.model, rc.variant);
  fs::create_directories(args.out);
  save_model(state.model, args.out + "/model.dgmd");
  io::write_dglt(args.out + "/latents.dglt", state.latents);
  io::write_metrics_csv(args.out + "/metrics.csv", state.metrics);
  return kOk;
}

int run_synthesize(const std::string& checkpoint, const std::string& config,
                   std::uint64_t seed, const std::string& out) {
  Model model = load_model(checkpoint);
  io::RunConfig rc;
  if (!config.empty()) {
    rc = io::load_run_config(config);
    check_checkpoint_matches(model, rc);
  }
  SeededRng rng(seed);
  std::optional<Tensor> a, m;
  if (model.cfg.d_appearance > 0)
    a = rng.standard_normal({model.cfg.d_appearance});
  if (model.cfg.d_motion > 0) m = rng.standard_normal({model.cfg.d_motion});
  FrameSequence X = synthesize(model, rng, rc.synth_length, rc.synth_burn_in,
                               a ? &*a : nullptr, m ? &*m : nullptr);
  write_sequence_outputs(out, X);
  return kOk;
}

int run_recover(const std::string& checkpoint, const std::string& config,
                const std::string& data, const std::string& mask_path,
                const std::string& truth_path, const std::string& out,
                std::size_t threads) {
  io::RunConfig rc = io::load_run_config(config);
  rc.train.threads = resolve_threads(threads);
  if (!checkpoint.empty()) {
    // Architecture comes from the checkpoint; training still starts fresh.
    Model m = load_model(checkpoint);
    check_checkpoint_matches(m, rc);
    rc.model = m.cfg;
  }
  FrameSequence X = io::read_dgsq(data);
  VisibilityMask mask = io::read_dgmk(mask_path);
  if (!mask.same_shape(X))
    throw data_error(mask_path + ": mask dimensions do not match " + data);
  std::optional<FrameSequence> truth;
  if (!truth_path.empty()) {
    truth = io::read_dgsq(truth_path);
    if (!truth->same_shape(X))
      throw data_error(truth_path + ": dimensions do not match " + data);
  }
  TrainState state;
  FrameSequence rec = recover(X, mask, rc.train, rc.model, &state,
                              truth ? &*truth : nullptr);
  fs::create_directories(out);
  write_sequence_outputs(out + "/recovered.dgsq", rec);
  save_model(state.model, out + "/model.dgmd");
  io::write_metrics_csv(out + "/metrics.csv", state.metrics);
  return kOk;
}

int run_animate(const std::string& checkpoint, const std::string& frame_path,
                std::size_t length, std::uint64_t seed,
                const std::string& out) {
  Model model = load_model(checkpoint);
  if (!model.encoder)
    throw data_error("animate requires a checkpoint with an encoder");
  Tensor frame = io::read_frame_image(frame_path);
  if (frame.shape[0] != model.cfg.frame_h ||
      frame.shape[1] != model.cfg.frame_w ||
      frame.shape[2] != model.cfg.frame_c)
    throw data_error(frame_path + ": frame " + frame.shape_str() +
                     " does not match the checkpoint");
  auto [s0, a] = encode(model, frame);
  SeededRng rng(seed);
  LatentTrajectory lat;
  lat.s0 = std::move(s0);
  lat.xi = rng.standard_normal({length, model.cfg.d_noise});
  if (model.cfg.d_appearance > 0) lat.a = std::move(a);
  FrameSequence X = rollout(model, lat);
  write_sequence_outputs(out, X);
  return kOk;
}

int run_interpolate(const std::string& checkpoint, const std::string& latents,
                    std::size_t i, std::size_t j, std::size_t steps,
                    const std::string& out) {
  Model model = load_model(checkpoint);
  if (model.cfg.d_appearance == 0)
    throw data_error("interpolate requires a model with appearance vectors");
  auto lats = io::read_dglt(latents);
  if (i >= lats.size() || j >= lats.size())
    throw data_error("latent sequence index out of range");
  if (!lats[i].a || !lats[j].a)
    throw data_error("latent store has no appearance vectors");
  auto seqs = interpolate_appearance(model, *lats[i].a, *lats[j].a, steps,
                                     lats[i].xi, lats[i].s0);
  fs::create_directories(out);
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%03zu.dgsq", k);
    write_sequence_outputs(out + "/" + name, seqs[k]);
  }
  return kOk;
}

int run_gradcheck(const std::string& config, std::uint64_t seed, bool corrupt) {
  ModelConfig mc;
  mc.d_state = 3;
  mc.d_noise = 2;
  mc.d_appearance = 2;
  mc.transition_hidden = {5};
  mc.decoder_hidden = {6};
  mc.frame_h = 4;
  mc.frame_w = 4;
  mc.frame_c = 1;
  if (!config.empty()) {
    io::RunConfig rc = io::load_run_config(config);
    mc = rc.model;
  }
  const std::size_t T = 4;
  SeededRng rng(seed);
  Model model = Model::build(mc);
  model.init_params(rng);

  LatentTrajectory lat;
  lat.s0 = rng.standard_normal({mc.d_state});
  lat.xi = rng.standard_normal({T, mc.d_noise});
  if (mc.d_appearance > 0) lat.a = rng.standard_normal({mc.d_appearance});
  if (mc.d_motion > 0) lat.m = rng.standard_normal({mc.d_motion});
  FrameSequence X = rng.standard_normal({T, mc.frame_h, mc.frame_w, mc.frame_c});
  for (auto& v : X.data) v = std::tanh(v);
  const double sigma = 0.5;

  // Flatten latents and parameters into one point.
  std::vector<double> point, analytic;
  auto append = [&](const Tensor& t) {
    point.insert(point.end(), t.data.begin(), t.data.end());
  };
  append(lat.s0);
  append(lat.xi);
  if (lat.a) append(*lat.a);
  if (lat.m) append(*lat.m);
  for (Param* p : model.params()) append(p->value);

  auto unflatten = [&](const std::vector<double>& x, Model& m2,
                       LatentTrajectory& l2) {
    std::size_t off = 0;
    auto pull = [&](Tensor& t) {
      std::copy(x.begin() + off, x.begin() + off + t.size(), t.data.begin());
      off += t.size();
    };
    pull(l2.s0);
    pull(l2.xi);
    if (l2.a) pull(*l2.a);
    if (l2.m) pull(*l2.m);
    for (Param* p : m2.params()) pull(p->value);
  };
  auto f = [&](const std::vector<double>& x) {
    Model m2 = model;
    LatentTrajectory l2 = lat;
    unflatten(x, m2, l2);
    return log_joint(m2, l2, X, nullptr, sigma);
  };

  LatentGradients lg = latent_gradients(model, lat, X, nullptr, sigma);
  param_gradients(model, {lat}, {&X}, {nullptr}, sigma);
  auto gappend = [&](const Tensor& t) {
    analytic.insert(analytic.end(), t.data.begin(), t.data.end());
  };
  gappend(lg.s0);
  gappend(lg.xi);
  if (lg.a) gappend(*lg.a);
  if (lg.m) gappend(*lg.m);
  for (Param* p : model.params()) gappend(p->grad);

  if (corrupt && !analytic.empty()) analytic[analytic.size() / 2] += 0.01;

  GradCheckReport rep = fd_gradcheck(f, point, analytic);
  std::cout << "gradcheck: " << point.size()
            << " coordinates, max relative error " << rep.max_rel_err
            << " at index " << rep.worst_index << " (analytic "
            << rep.analytic_at_worst << ", numeric " << rep.numeric_at_worst
            << ")\n";
  return rep.max_rel_err < 1e-5 ? kOk : kCheckFailed;
}

int run_oracle_compare(std::uint64_t seed, double delta, std::size_t steps,
                       std::size_t burn_in, bool mh, std::size_t chains,
                       std::size_t threads, bool posterior_init) {
  LangevinConfig cfg;
  cfg.delta = delta;
  cfg.mh_correct = mh;
  OracleCompareReport rep =
      oracle_compare(reference_linear_ssm(), 10, cfg, burn_in, steps, seed,
                     chains, resolve_threads(threads), posterior_init);
  std::cout << "oracle-compare: posterior-mean RMSE " << rep.rmse_mean
            << ", worst marginal-variance relative error "
            << rep.max_var_rel_err;
  if (mh) std::cout << ", acceptance rate " << rep.accept_rate;
  std::cout << "\n";
  return rep.rmse_mean < 0.1 ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dgen: dynamic generator model trainer and sampler"};
  app.require_subcommand(1);

  TrainArgs targs;
  auto* t = app.add_subcommand("train", "Train a model on DGSQ sequences");
  t->add_option("--config", targs.config, "run configuration file")->required();
  t->add_option("--data", targs.data, "DGSQ training sequences")->required();
  t->add_option("--mask", targs.masks, "DGMK masks paired by filename stem");
  t->add_option("--out", targs.out, "output directory")->required();
  t->add_option("--threads", targs.threads,
                "parallel sequences (env DGEN_THREADS)");

  std::string checkpoint, config, out, data, mask_path, truth_path, frame_path,
      latents, in_dir;
  std::uint64_t seed = 0;
  std::size_t length = 10, steps = 5, idx_i = 0, idx_j = 1, threads = 0;
  std::size_t mc_steps = 20000, mc_burn = 5000, mc_chains = 16;
  double delta = 0.01;
  bool corrupt = false, mh = false, posterior_init = false;

  auto* sy = app.add_subcommand("synthesize", "Sample a sequence from a checkpoint");
  sy->add_option("--checkpoint", checkpoint)->required();
  sy->add_option("--config", config, "optional run configuration");
  sy->add_option("--seed", seed);
  sy->add_option("--out", out, "output DGSQ path")->required();

  auto* rec = app.add_subcommand("recover", "Inpaint a masked sequence");
  rec->add_option("--checkpoint", checkpoint, "optional architecture source");
  rec->add_option("--config", config)->required();
  rec->add_option("--data", data, "masked DGSQ sequence")->required();
  rec->add_option("--mask", mask_path, "DGMK visibility mask")->required();
  rec->add_option("--truth", truth_path,
                  "uncorrupted DGSQ for the occluded-error metric only");
  rec->add_option("--out", out, "output directory")->required();
  rec->add_option("--threads", threads, "parallel sequences (env DGEN_THREADS)");

  auto* an = app.add_subcommand("animate", "Roll a video out of a single frame");
  an->add_option("--checkpoint", checkpoint)->required();
  an->add_option("--frame", frame_path, "PGM/PPM input frame")->required();
  an->add_option("--length", length, "frames to generate");
  an->add_option("--seed", seed);
  an->add_option("--out", out, "output DGSQ path")->required();

  auto* ip = app.add_subcommand("interpolate",
                                "Rollouts along an appearance-vector line");
  ip->add_option("--checkpoint", checkpoint)->required();
  ip->add_option("--latents", latents, "DGLT latent store")->required();
  ip->add_option("--i", idx_i, "first sequence index");
  ip->add_option("--j", idx_j, "second sequence index");
  ip->add_option("--steps", steps, "number of interpolation points");
  ip->add_option("--out", out, "output directory")->required();

  auto* gc = app.add_subcommand("gradcheck",
                                "Finite-difference check of all gradients");
  gc->add_option("--config", config, "optional run configuration");
  gc->add_option("--seed", seed);
  gc->add_flag("--corrupt", corrupt,
               "perturb one analytic coordinate (failure-path test hook)");

  auto* oc = app.add_subcommand("oracle-compare",
                                "Langevin vs exact smoother on a linear model");
  oc->add_option("--seed", seed);
  oc->add_option("--delta", delta, "Langevin step size");
  oc->add_option("--steps", mc_steps, "kept steps");
  oc->add_option("--burn-in", mc_burn, "discarded steps");
  oc->add_flag("--mh", mh, "Metropolis-adjusted proposals");
  oc->add_option("--chains", mc_chains, "independent chains to pool");
  oc->add_option("--threads", threads, "worker threads (0 = DGEN_THREADS)");
  oc->add_flag("--posterior-init", posterior_init,
               "start chains from an exact dense-solve posterior draw");

  auto* cv = app.add_subcommand("convert", "PGM/PPM directory to DGSQ");
  cv->add_option("--in", in_dir, "directory of frames")->required();
  cv->add_option("--out", out, "output DGSQ path")->required();

  auto* ex = app.add_subcommand("export", "DGSQ to a PGM/PPM directory");
  ex->add_option("--in", data, "input DGSQ path")->required();
  ex->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (t->parsed()) return run_train(targs);
    if (sy->parsed()) return run_synthesize(checkpoint, config, seed, out);
    if (rec->parsed())
      return run_recover(checkpoint, config, data, mask_path, truth_path, out,
                         threads);
    if (an->parsed()) return run_animate(checkpoint, frame_path, length, seed, out);
    if (ip->parsed())
      return run_interpolate(checkpoint, latents, idx_i, idx_j, steps, out);
    if (gc->parsed()) return run_gradcheck(config, seed, corrupt);
    if (oc->parsed())
      return run_oracle_compare(seed, delta, mc_steps, mc_burn, mh, mc_chains,
                                threads, posterior_init);
    if (cv->parsed()) {
      io::write_dgsq(out, io::convert_frames(in_dir));
      return kOk;
    }
    if (ex->parsed()) {
      io::dump_frames(out, io::read_dgsq(data));
      return kOk;
    }
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const dimension_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kOk;
}
