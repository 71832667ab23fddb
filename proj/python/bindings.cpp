#include <pybind11/complex.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>

#include "exdiff/datapipe.hpp"
#include "exdiff/error.hpp"
#include "exdiff/experiment.hpp"
#include "exdiff/metrics.hpp"
#include "exdiff/sampler.hpp"
#include "exdiff/sde.hpp"
#include "exdiff/spectro.hpp"

namespace py = pybind11;
using namespace exdiff;

namespace {

using CArray = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;
using RArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

ComplexGrid to_grid(const CArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D complex array");
  ComplexGrid g(a.shape(0), a.shape(1));
  std::copy_n(a.data(), g.size(), g.data.begin());
  return g;
}

CArray to_array(const ComplexGrid& g) {
  CArray out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(g.rows), static_cast<py::ssize_t>(g.cols)});
  std::copy(g.data.begin(), g.data.end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const RArray& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-D float array");
  return {a.data(), a.data() + a.size()};
}

RArray to_array(const std::vector<double>& v) {
  RArray out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

struct Model {
  std::shared_ptr<LoadedModel> loaded;
  std::shared_ptr<LatentProvider> latents;
};

}  // namespace

PYBIND11_MODULE(_exdiff, m) {
  m.doc() = "exdiff core bindings";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<OuveSchedule>(m, "Schedule")
      .def(py::init([](double gamma, double sigma_min, double sigma_max, double t_max, double t_eps) {
             OuveSchedule s{gamma, sigma_min, sigma_max, t_max, t_eps};
             s.validate();
             return s;
           }),
           py::arg("gamma") = 1.5, py::arg("sigma_min") = 0.05, py::arg("sigma_max") = 0.5, py::arg("t_max") = 1.0,
           py::arg("t_eps") = 0.03)
      .def_readonly("gamma", &OuveSchedule::gamma)
      .def_readonly("sigma_min", &OuveSchedule::sigma_min)
      .def_readonly("sigma_max", &OuveSchedule::sigma_max)
      .def_readonly("t_max", &OuveSchedule::t_max)
      .def_readonly("t_eps", &OuveSchedule::t_eps);

  py::class_<StftParams>(m, "StftParams")
      .def(py::init([](std::size_t window_length, std::size_t hop_length, std::size_t fft_size) {
             StftParams p{window_length, hop_length, fft_size, WindowKind::PeriodicHann};
             p.validate();
             return p;
           }),
           py::arg("window_length") = 510, py::arg("hop_length") = 128, py::arg("fft_size") = 510)
      .def_static("desk", &StftParams::desk)
      .def_readonly("window_length", &StftParams::window_length)
      .def_readonly("hop_length", &StftParams::hop_length)
      .def_readonly("fft_size", &StftParams::fft_size)
      .def_property_readonly("n_freq", &StftParams::n_freq);

  const OuveSchedule defaults;
  m.def("kernel_var", &kernel_var, py::arg("t"), py::arg("schedule") = defaults);
  m.def("kernel_std", &kernel_std, py::arg("t"), py::arg("schedule") = defaults);
  m.def("diffusion_coeff", &diffusion_coeff, py::arg("t"), py::arg("schedule") = defaults);
  m.def(
      "kernel_mean",
      [](const CArray& x0, const CArray& y, double t, const OuveSchedule& s) {
        return to_array(kernel_mean(to_grid(x0), to_grid(y), t, s));
      },
      py::arg("x0"), py::arg("y"), py::arg("t"), py::arg("schedule") = defaults);
  m.def(
      "kernel_score",
      [](const CArray& xt, const CArray& x0, const CArray& y, double t, const OuveSchedule& s) {
        return to_array(kernel_score(to_grid(xt), to_grid(x0), to_grid(y), t, s));
      },
      py::arg("xt"), py::arg("x0"), py::arg("y"), py::arg("t"), py::arg("schedule") = defaults);

  m.def(
      "pc_sample",
      [](const std::function<CArray(CArray, CArray, double)>& score, const CArray& y, const OuveSchedule& s,
         std::size_t n_steps, std::size_t corrector_steps, double snr_r, std::uint64_t seed) {
        SamplerConfig cfg;
        cfg.n_steps = n_steps;
        cfg.corrector_steps = corrector_steps;
        cfg.snr_r = snr_r;
        cfg.seed = seed;
        cfg.validate();
        const ScoreFn fn = [&](const ComplexGrid& x, const ComplexGrid& yy, double t, const LatentRepresentation*) {
          auto out = to_grid(score(to_array(x), to_array(yy), t));
          require_same_shape(out, x, "score callback");
          return out;
        };
        return to_array(pc_sample(fn, to_grid(y), nullptr, s, cfg));
      },
      "Reverse-time predictor-corrector sampling with score(x, y, t) supplied from Python.", py::arg("score"),
      py::arg("y"), py::arg("schedule") = defaults, py::arg("n_steps") = 40, py::arg("corrector_steps") = 1,
      py::arg("snr_r") = 0.5, py::arg("seed") = 0);

  m.def(
      "si_sdr", [](const RArray& est, const RArray& ref) { return si_sdr(to_vector(est), to_vector(ref)); },
      py::arg("estimate"), py::arg("reference"));
  m.def(
      "si_decompose",
      [](const RArray& est, const RArray& ref, const RArray& inter) {
        const auto d = si_decompose(to_vector(est), to_vector(ref), to_vector(inter));
        py::dict out;
        out["e_target"] = to_array(d.e_target);
        out["e_inter"] = to_array(d.e_inter);
        out["e_artif"] = to_array(d.e_artif);
        out["si_sdr"] = d.si_sdr;
        out["si_sir"] = d.si_sir;
        out["si_sar"] = d.si_sar;
        return out;
      },
      py::arg("estimate"), py::arg("reference"), py::arg("interference"));

  const auto pair_dict = [](const PairRecord& p) {
    py::dict out;
    out["clean"] = to_array(p.clean.samples);
    out["interference"] = to_array(p.interference.samples);
    out["mixture"] = to_array(p.mixture.samples);
    out["scale"] = p.scale;
    out["sample_rate"] = p.mixture.sample_rate;
    out["silent_regions"] = p.provenance.silent_regions;
    return out;
  };
  m.def(
      "remix_to_snr",
      [pair_dict](const RArray& clean, const RArray& inter, double target_db, const std::string& definition,
                  int rate) {
        return pair_dict(remix_to_snr(Waveform(to_vector(clean), rate), Waveform(to_vector(inter), rate), target_db,
                                      snr_definition_from_string(definition)));
      },
      py::arg("clean"), py::arg("interference"), py::arg("target_db") = 3.0,
      py::arg("definition") = "scale_invariant", py::arg("sample_rate") = kWorkingSampleRate);
  m.def(
      "synth_pair", [pair_dict](std::uint64_t seed, std::size_t index) { return pair_dict(synth_pair(seed, index)); },
      py::arg("seed"), py::arg("index") = 0);

  m.def(
      "stft",
      [](const RArray& samples, const StftParams& p, int rate) {
        return to_array(stft(Waveform(to_vector(samples), rate), p).bins);
      },
      py::arg("samples"), py::arg("params") = StftParams{}, py::arg("sample_rate") = kWorkingSampleRate);
  m.def(
      "istft",
      [](const CArray& bins, const StftParams& p, int rate) {
        ComplexSpectrogram s;
        s.bins = to_grid(bins);
        s.params = p;
        s.sample_rate = rate;
        return to_array(istft(s).samples);
      },
      py::arg("bins"), py::arg("params") = StftParams{}, py::arg("sample_rate") = kWorkingSampleRate);
  m.def(
      "compress",
      [](const CArray& bins, double exponent, double scale) {
        ComplexSpectrogram s;
        s.bins = to_grid(bins);
        return to_array(compress(s, exponent, scale).bins);
      },
      py::arg("bins"), py::arg("exponent") = 0.5, py::arg("scale") = 0.15);
  m.def(
      "decompress",
      [](const CArray& bins, double exponent, double scale) {
        ComplexSpectrogram s;
        s.bins = to_grid(bins);
        s.compression = Compression{exponent, scale, true};
        return to_array(decompress(s).bins);
      },
      py::arg("bins"), py::arg("exponent") = 0.5, py::arg("scale") = 0.15);

  m.def(
      "run_oracle",
      [](const std::vector<double>& times, std::size_t n_paths, double dt, std::uint64_t seed,
         const OuveSchedule& s) {
        py::list out;
        for (const auto& r : run_oracle(s, times, n_paths, dt, seed)) {
          py::dict d;
          d["t"] = r.t;
          d["kernel_mean"] = r.kernel_mean;
          d["kernel_var"] = r.kernel_var;
          d["empirical_mean"] = r.empirical_mean;
          d["empirical_var"] = r.empirical_var;
          d["mean_error_in_se"] = r.mean_error_in_se;
          d["var_relative_error"] = r.var_relative_error;
          out.append(d);
        }
        return out;
      },
      py::arg("times"), py::arg("n_paths") = 20000, py::arg("dt") = 1e-3, py::arg("seed") = 0,
      py::arg("schedule") = defaults);

  m.def(
      "parse_config", [](const std::string& text) { return to_json_string(parse_config_text(text, "python"), 2); },
      "Validates a JSON config and returns the resolved configuration as JSON.", py::arg("text") = "");
  m.def("config_reference", &config_reference);

  m.def(
      "train",
      [](const std::string& config_text, const std::string& out_dir, std::optional<std::size_t> steps) {
        auto cfg = parse_config_text(config_text, "python");
        if (steps) cfg.train.max_steps = *steps;
        cfg.resolve();
        std::vector<double> log;
        {
          py::gil_scoped_release release;
          const auto pairs = training_pairs(cfg);
          const auto latents = make_latent_provider(cfg);
          auto model = train_experiment(cfg, pairs, latents, out_dir);
          for (const auto& e : model.result.log) log.push_back(e.loss);
        }
        return to_array(log);
      },
      "Trains on the configured corpus and writes checkpoints to out_dir; returns the per-step losses.",
      py::arg("config_text"), py::arg("out_dir"), py::arg("steps") = py::none());

  py::class_<Model>(m, "Model")
      .def_property_readonly("config_json", [](const Model& mdl) { return to_json_string(mdl.loaded->config, 2); })
      .def_property_readonly("parameter_count",
                             [](const Model& mdl) { return mdl.loaded->net.store().scalar_count(); });
  m.def(
      "load_model",
      [](const std::string& path, bool use_ema) {
        Model mdl;
        mdl.loaded = std::make_shared<LoadedModel>(load_model(std::filesystem::path(path), use_ema));
        if (mdl.loaded->config.latent.provider == LatentSource::File) {
          throw InvalidArgument("checkpoint uses file latents; not supported from Python");
        }
        mdl.latents = make_latent_provider(mdl.loaded->config);
        return mdl;
      },
      py::arg("path"), py::arg("use_ema") = true);
  m.def(
      "enhance",
      [](Model& mdl, const RArray& samples, int rate, std::optional<std::size_t> n_steps, std::uint64_t seed) {
        auto cfg = mdl.loaded->config;
        if (n_steps) cfg.sampler.n_steps = *n_steps;
        cfg.sampler.seed = seed;
        auto opt = cfg.enhance_options();
        Waveform noisy(to_vector(samples), rate);
        Waveform out;
        {
          py::gil_scoped_release release;
          out = enhance(noisy, mdl.loaded->net, cfg.stft, cfg.compression, *mdl.latents, opt);
          if (out.sample_rate != rate) out = resample(out, rate);
        }
        return to_array(out.samples);
      },
      py::arg("model"), py::arg("samples"), py::arg("sample_rate") = kWorkingSampleRate,
      py::arg("n_steps") = py::none(), py::arg("seed") = 0);
}
