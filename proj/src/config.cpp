#include "exdiff/config.hpp"

#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "exdiff/error.hpp"

namespace exdiff {

using nlohmann::json;

const char* to_string(Task t) { return t == Task::Speech ? "speech" : "vocal"; }

Task task_from_string(const std::string& s) {
  if (s == "speech") return Task::Speech;
  if (s == "vocal") return Task::Vocal;
  throw InvalidArgument("unknown task '" + s + "' (expected speech or vocal)");
}

std::size_t default_reverse_steps(Task t) { return t == Task::Speech ? 40 : 90; }

namespace {

const char* to_string(LatentSource s) { return s == LatentSource::Toy ? "toy" : "file"; }

LatentSource latent_source_from_string(const std::string& s) {
  if (s == "toy") return LatentSource::Toy;
  if (s == "file") return LatentSource::File;
  throw InvalidArgument("unknown latent provider '" + s + "' (expected toy or file)");
}


// Walks every configurable field once; the reader, writer and help printer
// share this layout so key paths cannot drift apart.
template <typename V>
void visit(V& v, ExperimentConfig& c) {
  v.enumeration("task", c.task, task_from_string);
  v.section("schedule", [&] {
    v.field("gamma", c.schedule.gamma);
    v.field("sigma_min", c.schedule.sigma_min);
    v.field("sigma_max", c.schedule.sigma_max);
    v.field("t_max", c.schedule.t_max);
    v.field("t_eps", c.schedule.t_eps);
  });
  v.section("stft", [&] {
    v.field("window_length", c.stft.window_length);
    v.field("hop_length", c.stft.hop_length);
    v.field("fft_size", c.stft.fft_size);
    v.enumeration("window", c.stft.window, window_kind_from_string);
  });
  v.section("compression", [&] {
    v.field("exponent", c.compression.exponent);
    v.field("scale", c.compression.scale);
  });
  v.section("net", [&] {
    v.field("n_levels", c.net.n_levels);
    v.field("base_channels", c.net.base_channels);
    v.field("channel_multipliers", c.net.channel_multipliers);
    v.field("attn_dim", c.net.attn_dim);
    v.enumeration("fusion", c.net.fusion, fusion_variant_from_string);
    v.field("time_embed_dim", c.net.time_embed_dim);
    v.field("use_progressive_input", c.net.use_progressive_input);
    v.enumeration("latent_tokens", c.net.latent_tokens, latent_token_mode_from_string);
    v.field("positional_encoding", c.net.positional_encoding);
    v.field("concat_planes", c.net.concat_planes);
    v.field("fourier_scale", c.net.fourier_scale);
    v.field("output_init_scale", c.net.output_init_scale);
    v.field("scale_by_sigma", c.net.scale_by_sigma);
    v.field("init_seed", c.net.init_seed);
  });
  v.section("train", [&] {
    v.field("lr", c.train.lr);
    v.field("batch_size", c.train.batch_size);
    v.field("ema_decay", c.train.ema_decay);
    v.field("max_steps", c.train.max_steps);
    v.field("seed", c.train.seed);
    v.field("checkpoint_every", c.train.checkpoint_every);
    v.field("precision", c.train.precision);
    v.field("log_every", c.train.log_every);
  });
  v.section("sampler", [&] {
    v.optional_field("n_steps", c.sampler.n_steps, c.sampler_steps_set);
    v.field("corrector_steps", c.sampler.corrector_steps);
    v.field("snr_r", c.sampler.snr_r);
    v.field("seed", c.sampler.seed);
    v.field("use_ema", c.sampler.use_ema);
    v.field("max_batch", c.max_batch);
  });
  v.section("data", [&] {
    v.field("target_snr_db", c.data.mix.target_snr_db);
    v.enumeration("snr_definition", c.data.mix.snr_definition, snr_definition_from_string);
    v.field("segment_seconds", c.data.mix.segment_seconds);
    v.field("seed", c.data.mix.seed);
    v.field("vocals_dir", c.data.vocals_dir);
    v.field("accomp_dir", c.data.accomp_dir);
    v.field("pairs_dir", c.data.pairs_dir);
    v.field("incoherent_pairs", c.data.incoherent_pairs);
    v.field("chunk_frames", c.data.chunk_frames);
    for (auto* s : {&c.data.synth, &c.data.heldout}) {
      v.section(s == &c.data.synth ? "synth" : "heldout", [&] {
        v.field("n_pairs", s->n_pairs);
        v.field("seed", s->seed);
        v.field("min_seconds", s->config.min_seconds);
        v.field("max_seconds", s->config.max_seconds);
        v.field("target_snr_db", s->config.target_snr_db);
        v.field("min_silence_seconds", s->config.min_silence_seconds);
        v.field("min_silence_fraction", s->config.min_silence_fraction);
        v.field("peak", s->config.peak);
      });
    }
  });
  v.section("latent", [&] {
    v.enumeration("provider", c.latent.provider, latent_source_from_string);
    v.field("H", c.latent.width);
    v.field("seed", c.latent.seed);
    v.field("path", c.latent.path);
    v.section("toy", [&] {
      v.field("n_mels", c.latent.toy.n_mels);
      v.field("window_length", c.latent.toy.window_length);
      v.field("hop_length", c.latent.toy.hop_length);
      v.field("fft_size", c.latent.toy.fft_size);
      v.field("n_classes", c.latent.toy.n_classes);
    });
  });
}

std::string join(const std::vector<std::string>& path, const std::string& key) {
  std::string out;
  for (const auto& p : path) out += p + ".";
  return out + key;
}

class Reader {
 public:
  Reader(const json& root, std::string source) : source_(std::move(source)) { stack_.push_back(&root); }

  template <typename F>
  void section(const char* key, F&& body) {
    const json* j = lookup(key);
    if (!j) return;
    if (!j->is_object()) fail(key, "expected an object");
    stack_.push_back(j);
    path_.push_back(key);
    body();
    check_unknown();
    path_.pop_back();
    stack_.pop_back();
  }

  void field(const char* key, double& dst) {
    if (const json* j = lookup(key)) {
      if (!j->is_number()) fail(key, "expected a number");
      dst = j->get<double>();
    }
  }
  void field(const char* key, bool& dst) {
    if (const json* j = lookup(key)) {
      if (!j->is_boolean()) fail(key, "expected true or false");
      dst = j->get<bool>();
    }
  }
  void field(const char* key, std::string& dst) {
    if (const json* j = lookup(key)) {
      if (!j->is_string()) fail(key, "expected a string");
      dst = j->get<std::string>();
    }
  }
  void field(const char* key, int& dst) {
    if (const json* j = lookup(key)) {
      if (!j->is_number_integer()) fail(key, "expected an integer");
      const auto v = j->get<std::int64_t>();
      if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) fail(key, "out of range");
      dst = static_cast<int>(v);
    }
  }
  void field(const char* key, std::uint64_t& dst) {
    if (const json* j = lookup(key)) dst = unsigned_value(*j, key);
  }
  void field(const char* key, std::vector<std::size_t>& dst) {
    if (const json* j = lookup(key)) {
      if (!j->is_array()) fail(key, "expected an array of non-negative integers");
      dst.clear();
      for (const auto& e : *j) dst.push_back(static_cast<std::size_t>(unsigned_value(e, key)));
    }
  }
  void optional_field(const char* key, std::size_t& dst, bool& present) {
    if (const json* j = lookup(key)) {
      dst = static_cast<std::size_t>(unsigned_value(*j, key));
      present = true;
    }
  }
  template <typename E>
  void enumeration(const char* key, E& dst, E (*parse)(const std::string&)) {
    if (const json* j = lookup(key)) {
      if (!j->is_string()) fail(key, "expected a string");
      try {
        dst = parse(j->get<std::string>());
      } catch (const Error& e) {
        fail(key, e.what());
      }
    }
  }

  void check_unknown() {
    const json& obj = *stack_.back();
    const auto& seen = seen_[depth_key()];
    for (const auto& item : obj.items()) {
      if (!seen.count(item.key())) {
        throw ParseError(source_ + ": unknown key '" + join(path_, item.key()) + "'");
      }
    }
  }

 private:
  const json* lookup(const char* key) {
    seen_[depth_key()].insert(key);
    const json& obj = *stack_.back();
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
  }
  std::uint64_t unsigned_value(const json& j, const char* key) {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
      fail(key, "expected a non-negative integer");
    }
    return j.get<std::uint64_t>();
  }
  std::string depth_key() const { return join(path_, ""); }
  [[noreturn]] void fail(const char* key, const std::string& why) {
    throw ParseError(source_ + ": key '" + join(path_, key) + "': " + why);
  }

  std::string source_;
  std::vector<const json*> stack_;
  std::vector<std::string> path_;
  std::map<std::string, std::set<std::string>> seen_;
};

class Writer {
 public:
  json root = json::object();
  Writer() { stack_.push_back(&root); }

  template <typename F>
  void section(const char* key, F&& body) {
    json& child = (*stack_.back())[key] = json::object();
    stack_.push_back(&child);
    body();
    stack_.pop_back();
  }
  template <typename T>
  void field(const char* key, T& v) {
    (*stack_.back())[key] = v;
  }
  void optional_field(const char* key, std::size_t& v, bool&) { (*stack_.back())[key] = v; }
  template <typename E>
  void enumeration(const char* key, E& v, E (*)(const std::string&)) {
    (*stack_.back())[key] = to_string(v);
  }

 private:
  std::vector<json*> stack_;
};

class HelpPrinter {
 public:
  std::ostringstream out;

  template <typename F>
  void section(const char* key, F&& body) {
    path_.push_back(key);
    body();
    path_.pop_back();
  }
  template <typename T>
  void field(const char* key, T& v) {
    out << "  " << join(path_, key) << " = " << json(v).dump() << "\n";
  }
  void optional_field(const char* key, std::size_t&, bool&) {
    out << "  " << join(path_, key) << " = 40 for task speech, 90 for task vocal\n";
  }
  template <typename E>
  void enumeration(const char* key, E& v, E (*)(const std::string&)) {
    out << "  " << join(path_, key) << " = \"" << to_string(v) << "\"\n";
  }

 private:
  std::vector<std::string> path_;
};

}  // namespace

void ExperimentConfig::resolve() {
  if (!sampler_steps_set) sampler.n_steps = default_reverse_steps(task);
  net.latent_dim = latent.width;
  if (latent.width == 0) throw InvalidArgument("latent.H must be positive");
  schedule.validate();
  stft.validate();
  net.validate();
  train.validate();
  sampler.validate();
  data.mix.validate();
  if (max_batch == 0) throw InvalidArgument("sampler.max_batch must be positive");
  if (data.chunk_frames == 0) throw InvalidArgument("data.chunk_frames must be positive");
  // Training chunks and the frequency axis must survive every downsampling level.
  net.validate_grid(stft.n_freq(), data.chunk_frames);
  if (latent.provider == LatentSource::File && latent.path.empty()) {
    throw InvalidArgument("latent.path is required when latent.provider is file");
  }
}

EnhanceOptions ExperimentConfig::enhance_options() const {
  EnhanceOptions o;
  o.sampler = sampler;
  o.chunk_frames = data.chunk_frames;
  o.max_batch = max_batch;
  return o;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& source) {
  json root;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    root = json::object();
  } else {
    try {
      root = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(source + ": " + e.what());
    }
  }
  if (!root.is_object()) throw ParseError(source + ": top level must be a JSON object");
  ExperimentConfig cfg;
  Reader reader(root, source);
  visit(reader, cfg);
  reader.check_unknown();
  try {
    cfg.resolve();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(source + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string to_json_string(const ExperimentConfig& cfg, int indent) {
  Writer w;
  visit(w, const_cast<ExperimentConfig&>(cfg));
  return w.root.dump(indent);
}

std::string config_reference() {
  ExperimentConfig cfg;
  HelpPrinter h;
  visit(h, cfg);
  return h.out.str();
}

}  // namespace exdiff
