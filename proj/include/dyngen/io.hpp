#pragma once

#include <algorithm>
#include <cctype>
#include <cfenv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dyngen/binio.hpp"
#include "dyngen/model.hpp"
#include "dyngen/trainer.hpp"

namespace dyngen::io {

// ---- DGSQ: frame sequence --------------------------------------------------
// magic "DGSQ", version u32=1, T,H,W,C u32, payload T*H*W*C f32 LE in [-1,1].

inline void write_dgsq(const std::string& path, const FrameSequence& X) {
  if (X.shape.size() != 4)
    throw dimension_error("write_dgsq: sequence must be [T,H,W,C]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open for writing: " + path);
  binio::write_magic(os, "DGSQ");
  binio::write_u32(os, 1);
  for (std::size_t s : X.shape)
    binio::write_u32(os, static_cast<std::uint32_t>(s));
  for (double v : X.data) {
    double c = std::clamp(v, -1.0, 1.0);
    binio::write_f32(os, static_cast<float>(c));
  }
  if (!os) throw data_error("failed writing: " + path);
}

inline FrameSequence read_dgsq(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open: " + path);
  binio::expect_magic(is, "DGSQ", path);
  std::uint32_t version = binio::read_u32(is);
  if (version != 1)
    throw data_error(path + ": unsupported DGSQ version " +
                     std::to_string(version));
  std::size_t T = binio::read_u32(is), H = binio::read_u32(is),
              W = binio::read_u32(is), C = binio::read_u32(is);
  FrameSequence X = Tensor::zeros({T, H, W, C});
  for (auto& v : X.data) {
    v = binio::read_f32(is);
    if (!(v >= -1.0 && v <= 1.0))
      throw data_error(path + ": value outside [-1,1]");
  }
  return X;
}

// ---- DGMK: visibility mask -------------------------------------------------
// magic "DGMK", version u32=1, T,H,W,C u32, payload bytes in {0,1}.

inline void write_dgmk(const std::string& path, const VisibilityMask& mask) {
  if (mask.shape.size() != 4)
    throw dimension_error("write_dgmk: mask must be [T,H,W,C]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open for writing: " + path);
  binio::write_magic(os, "DGMK");
  binio::write_u32(os, 1);
  for (std::size_t s : mask.shape)
    binio::write_u32(os, static_cast<std::uint32_t>(s));
  for (double v : mask.data) {
    char b = v != 0.0 ? 1 : 0;
    os.write(&b, 1);
  }
  if (!os) throw data_error("failed writing: " + path);
}

inline VisibilityMask read_dgmk(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open: " + path);
  binio::expect_magic(is, "DGMK", path);
  std::uint32_t version = binio::read_u32(is);
  if (version != 1)
    throw data_error(path + ": unsupported DGMK version " +
                     std::to_string(version));
  std::size_t T = binio::read_u32(is), H = binio::read_u32(is),
              W = binio::read_u32(is), C = binio::read_u32(is);
  VisibilityMask m = Tensor::zeros({T, H, W, C});
  for (auto& v : m.data) {
    char b;
    is.read(&b, 1);
    if (!is) throw data_error(path + ": truncated mask payload");
    if (b != 0 && b != 1)
      throw data_error(path + ": mask byte outside {0,1}");
    v = b;
  }
  return m;
}

// ---- DGLT: latent store ----------------------------------------------------
// magic "DGLT", version u32=1, n u32, then per sequence the dims
// (d, T, d_noise, d_app, d_motion as u32) and s0, xi, a, m as f64 LE.

inline void write_dglt(const std::string& path,
                       const std::vector<LatentTrajectory>& latents) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open for writing: " + path);
  binio::write_magic(os, "DGLT");
  binio::write_u32(os, 1);
  binio::write_u32(os, static_cast<std::uint32_t>(latents.size()));
  for (const auto& lat : latents) {
    binio::write_u32(os, static_cast<std::uint32_t>(lat.s0.size()));
    binio::write_u32(os, static_cast<std::uint32_t>(lat.length()));
    binio::write_u32(os, static_cast<std::uint32_t>(
                             lat.length() ? lat.xi.size() / lat.length() : 0));
    binio::write_u32(os, static_cast<std::uint32_t>(lat.a ? lat.a->size() : 0));
    binio::write_u32(os, static_cast<std::uint32_t>(lat.m ? lat.m->size() : 0));
    for (double v : lat.s0.data) binio::write_f64(os, v);
    for (double v : lat.xi.data) binio::write_f64(os, v);
    if (lat.a)
      for (double v : lat.a->data) binio::write_f64(os, v);
    if (lat.m)
      for (double v : lat.m->data) binio::write_f64(os, v);
  }
  if (!os) throw data_error("failed writing: " + path);
}

inline std::vector<LatentTrajectory> read_dglt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open: " + path);
  binio::expect_magic(is, "DGLT", path);
  std::uint32_t version = binio::read_u32(is);
  if (version != 1)
    throw data_error(path + ": unsupported DGLT version " +
                     std::to_string(version));
  std::uint32_t n = binio::read_u32(is);
  std::vector<LatentTrajectory> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::size_t d = binio::read_u32(is), T = binio::read_u32(is),
                dn = binio::read_u32(is), da = binio::read_u32(is),
                dm = binio::read_u32(is);
    LatentTrajectory lat;
    lat.s0 = Tensor::zeros({d});
    lat.xi = Tensor::zeros({T, dn});
    for (auto& v : lat.s0.data) v = binio::read_f64(is);
    for (auto& v : lat.xi.data) v = binio::read_f64(is);
    if (da) {
      lat.a = Tensor::zeros({da});
      for (auto& v : lat.a->data) v = binio::read_f64(is);
    }
    if (dm) {
      lat.m = Tensor::zeros({dm});
      for (auto& v : lat.m->data) v = binio::read_f64(is);
    }
    out.push_back(std::move(lat));
  }
  return out;
}

// ---- PGM (P5) / PPM (P6) ---------------------------------------------------

/// [-1,1] -> [0,255], rounded half to even.
inline unsigned char to_byte(double v) {
  double x = (std::clamp(v, -1.0, 1.0) + 1.0) * 127.5;
  return static_cast<unsigned char>(std::nearbyint(x));
}

inline void write_frame_image(const std::string& path, const double* frame,
                              std::size_t h, std::size_t w, std::size_t c) {
  if (c != 1 && c != 3)
    throw data_error("frame export supports C=1 (PGM) or C=3 (PPM)");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open for writing: " + path);
  os << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> buf(h * w * c);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(frame[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
  if (!os) throw data_error("failed writing: " + path);
}

/// Reads a binary PGM/PPM with maxval 255; returns [h,w,c] in [-1,1].
inline Tensor read_frame_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open: " + path);
  auto next_token = [&]() -> std::string {
    std::string tok;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        while (is.get(ch) && ch != '\n') {}
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok += ch;
    }
    return tok;
  };
  std::string magic = next_token();
  std::size_t c;
  if (magic == "P5")
    c = 1;
  else if (magic == "P6")
    c = 3;
  else
    throw data_error(path + ": expected binary PGM (P5) or PPM (P6)");
  std::size_t w = std::stoul(next_token());
  std::size_t h = std::stoul(next_token());
  std::size_t maxval = std::stoul(next_token());
  if (maxval != 255) throw data_error(path + ": maxval must be 255");
  std::vector<unsigned char> buf(h * w * c);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!is) throw data_error(path + ": truncated pixel data");
  Tensor t = Tensor::zeros({h, w, c});
  for (std::size_t i = 0; i < buf.size(); ++i)
    t.data[i] = static_cast<double>(buf[i]) / 127.5 - 1.0;
  return t;
}

/// One image per frame, frame_000000.pgm (C=1) or .ppm (C=3).
inline void dump_frames(const std::string& dir, const FrameSequence& X) {
  if (X.shape.size() != 4)
    throw dimension_error("dump_frames: sequence must be [T,H,W,C]");
  std::filesystem::create_directories(dir);
  std::size_t T = X.shape[0], h = X.shape[1], w = X.shape[2], c = X.shape[3];
  std::size_t fd = h * w * c;
  const char* ext = c == 1 ? "pgm" : "ppm";
  for (std::size_t t = 0; t < T; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06zu.%s", t, ext);
    write_frame_image(dir + "/" + name, X.data.data() + t * fd, h, w, c);
  }
}

/// Ingests a directory of equally sized PGM/PPM images, in name-sorted
/// frame order, into a DGSQ sequence.
inline FrameSequence convert_frames(const std::string& dir) {
  if (!std::filesystem::is_directory(dir))
    throw data_error("convert_frames: not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path().string());
  }
  if (files.empty()) throw data_error("convert_frames: no PGM/PPM files in " + dir);
  std::sort(files.begin(), files.end());
  std::vector<Tensor> frames;
  for (const auto& f : files) {
    Tensor t = read_frame_image(f);
    if (!frames.empty() && t.shape != frames.front().shape)
      throw data_error("convert_frames: mixed image dimensions (" + f + ")");
    frames.push_back(std::move(t));
  }
  std::size_t h = frames[0].shape[0], w = frames[0].shape[1],
              c = frames[0].shape[2];
  FrameSequence X = Tensor::zeros({frames.size(), h, w, c});
  std::size_t fd = h * w * c;
  for (std::size_t t = 0; t < frames.size(); ++t)
    std::copy(frames[t].data.begin(), frames[t].data.end(),
              X.data.begin() + t * fd);
  return X;
}

// ---- metrics CSV -----------------------------------------------------------

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<MetricsRow>& rows) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot open for writing: " + path);
  os << "iter,log_joint,recon_err_visible,recon_err_occluded,wallclock_ms\n";
  for (const auto& r : rows) {
    os << r.iter << "," << fmt_double(r.log_joint) << ","
       << fmt_double(r.recon_err_visible) << ",";
    if (r.recon_err_occluded) os << fmt_double(*r.recon_err_occluded);
    os << "," << r.wallclock_ms << "\n";
  }
  if (!os) throw data_error("failed writing: " + path);
}

// ---- run configuration (key=value text) ------------------------------------

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TrainVariant variant = TrainVariant::plain;
  std::size_t synth_burn_in = 60;
  std::size_t synth_length = 60;
};

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw config_error("expected a boolean, got '" + v + "'");
}

inline std::vector<std::size_t> parse_dims(const std::string& v) {
  std::vector<std::size_t> out;
  std::string part;
  std::stringstream ss(v);
  while (std::getline(ss, part, 'x')) out.push_back(std::stoul(part));
  return out;
}

}  // namespace detail

/// Plain-text key=value configuration, '#' comments. Unknown keys are
/// rejected with the offending line number. Values apply in a fixed order
/// (preset first), so the file's line order never matters.
inline RunConfig parse_run_config(std::istream& is, const std::string& name) {
  static const std::vector<std::string> known = {
      "model.d",          "model.d_noise",   "model.d_appearance",
      "model.d_motion",   "model.decoder",   "model.frame_shape",
      "model.preset",     "langevin.delta",  "langevin.steps",
      "langevin.sigma",   "langevin.mh",     "train.iterations",
      "train.lr",         "train.beta1",     "train.beta2",
      "train.chunk",      "train.seed",      "train.variant",
      "synth.burn_in",    "synth.length"};
  std::map<std::string, std::pair<std::string, int>> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error(name + ":" + std::to_string(lineno) +
                         ": expected key=value");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw config_error(name + ":" + std::to_string(lineno) +
                         ": unknown key '" + key + "'");
    if (kv.count(key))
      throw config_error(name + ":" + std::to_string(lineno) +
                         ": duplicate key '" + key + "'");
    kv[key] = {value, lineno};
  }

  RunConfig rc;
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return it->second.first;
  };
  auto fail = [&](const std::string& key, const std::string& msg) -> void {
    throw config_error(name + ":" + std::to_string(kv.at(key).second) + ": " +
                       key + ": " + msg);
  };

  try {
    if (auto v = take("model.preset")) {
      if (*v == "desk")
        rc.model = ModelConfig::desk();
      else if (*v == "paper")
        rc.model = ModelConfig::paper();
      else
        fail("model.preset", "expected desk|paper, got '" + *v + "'");
    }
    if (auto v = take("model.d")) rc.model.d_state = std::stoul(*v);
    if (auto v = take("model.d_noise")) rc.model.d_noise = std::stoul(*v);
    if (auto v = take("model.d_appearance"))
      rc.model.d_appearance = std::stoul(*v);
    if (auto v = take("model.d_motion")) rc.model.d_motion = std::stoul(*v);
    if (auto v = take("model.decoder")) {
      if (*v == "mlp")
        rc.model.decoder = DecoderKind::mlp;
      else if (*v == "deconv")
        rc.model.decoder = DecoderKind::deconv;
      else
        fail("model.decoder", "expected mlp|deconv, got '" + *v + "'");
    }
    if (auto v = take("model.frame_shape")) {
      auto dims = detail::parse_dims(*v);
      if (dims.size() != 3)
        fail("model.frame_shape", "expected HxWxC, got '" + *v + "'");
      rc.model.frame_h = dims[0];
      rc.model.frame_w = dims[1];
      rc.model.frame_c = dims[2];
    }
    if (auto v = take("langevin.delta"))
      rc.train.langevin.delta = std::stod(*v);
    if (auto v = take("langevin.steps"))
      rc.train.langevin.steps = std::stoul(*v);
    if (auto v = take("langevin.sigma"))
      rc.train.langevin.sigma = std::stod(*v);
    if (auto v = take("langevin.mh"))
      rc.train.langevin.mh_correct = detail::parse_bool(*v);
    if (auto v = take("train.iterations"))
      rc.train.iterations = std::stoul(*v);
    if (auto v = take("train.lr")) rc.train.learning_rate = std::stod(*v);
    if (auto v = take("train.beta1")) rc.train.adam_beta1 = std::stod(*v);
    if (auto v = take("train.beta2")) rc.train.adam_beta2 = std::stod(*v);
    if (auto v = take("train.chunk")) rc.train.chunk_length = std::stoul(*v);
    if (auto v = take("train.seed")) rc.train.seed = std::stoull(*v);
    if (auto v = take("train.variant")) {
      if (*v == "plain")
        rc.variant = TrainVariant::plain;
      else if (*v == "appearance")
        rc.variant = TrainVariant::appearance;
      else if (*v == "appearance+motion")
        rc.variant = TrainVariant::appearance_motion;
      else if (*v == "conditional-encoder")
        rc.variant = TrainVariant::conditional_encoder;
      else
        fail("train.variant",
             "expected plain|appearance|appearance+motion|conditional-encoder");
    }
    if (auto v = take("synth.burn_in")) rc.synth_burn_in = std::stoul(*v);
    if (auto v = take("synth.length")) rc.synth_length = std::stoul(*v);
  } catch (const config_error&) {
    throw;
  } catch (const std::exception& e) {
    throw config_error(name + ": invalid value (" + e.what() + ")");
  }

  if (rc.variant == TrainVariant::conditional_encoder)
    rc.model.has_encoder = true;
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config: " + path);
  return parse_run_config(is, path);
}

}  // namespace dyngen::io
