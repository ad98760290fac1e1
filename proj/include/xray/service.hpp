#pragma once

// Local HTTP service over a loaded bundle. Handlers are plain functions of
// the request bytes so they can be exercised without a socket; serve()
// wires them into cpp-httplib.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "xray/bundle.hpp"
#include "xray/error.hpp"
#include "xray/eval.hpp"
#include "xray/explain.hpp"
#include "xray/image.hpp"
#include "xray/ood.hpp"

namespace xray {

inline constexpr std::size_t mebibyte = 1024 * 1024;

struct ServiceConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;
  std::filesystem::path bundle_path;
  std::size_t max_upload_bytes = 16 * mebibyte;
  bool ood_gate = true;

  void validate() const {
    if (max_upload_bytes < mebibyte) fail(ErrorCode::InvalidConfig, "max upload must be at least 1 MiB");
    if (port < 0 || port > 65535) fail(ErrorCode::InvalidConfig, "port out of range");
  }
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

inline Response json_response(const nlohmann::json& j, int status = 200) { return {status, "application/json", j.dump()}; }

inline int http_status(const Error& e) {
  switch (e.code()) {
    case ErrorCode::UnsupportedFormat: return 415;
    case ErrorCode::BadClassIndex:
    case ErrorCode::MalformedImage:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::InvalidConfig:
    case ErrorCode::IncompatibleHead: return 400;
    default: return 500;
  }
}

inline Response error_response(const Error& e) {
  return json_response({{"error", to_string(e.code())}, {"message", e.what()}}, http_status(e));
}

inline std::string png_string(const Image& img) {
  const std::vector<std::uint8_t> png = encode_png(img);
  return {png.begin(), png.end()};
}

class Service {
 public:
  /// Validates and self-verifies the bundle on its embedded fixtures.
  Service(ModelBundle bundle, bool ood_gate = true) : bundle_(std::move(bundle)) {
    try {
      bundle_.validate();
      net_ = Network(bundle_.graph);
      if (bundle_.fixtures.empty()) fail(ErrorCode::BundleLoadFailure, "bundle has no fixture images to verify");
      report_ = verify_bundle(bundle_);
      if (!report_.within(bundle_verify_tolerance))
        fail(ErrorCode::BundleLoadFailure,
             "bundle self-verification failed: max diff " + std::to_string(report_.max_abs_diff));
      if (bundle_.ood && ood_gate) ae_ = Autoencoder::from(*bundle_.ood);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::BundleLoadFailure) throw;
      fail(ErrorCode::BundleLoadFailure, std::string("bundle failed to load: ") + e.what());
    }
  }

  // The autoencoder view borrows the bundle's weight buffers.
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  static Service load(const std::filesystem::path& dir, bool ood_gate = true) {
    ModelBundle b;
    try {
      b = read_bundle(dir);
    } catch (const Error& e) {
      fail(ErrorCode::BundleLoadFailure, "cannot load bundle '" + dir.string() + "': " + e.what());
    }
    return Service(std::move(b), ood_gate);
  }

  const ModelBundle& bundle() const { return bundle_; }
  bool gate_enabled() const { return ae_.has_value(); }
  const DiffReport& verification() const { return report_; }

  Response health() const {
    return json_response({{"status", "ok"},
                          {"format_version", bundle_.format_version},
                          {"class_names", bundle_.class_names},
                          {"input_size", bundle_.preprocess.target_size},
                          {"ood_gate", gate_enabled()}});
  }

  Response model_info() const {
    nlohmann::json j;
    j["format_version"] = bundle_.format_version;
    j["class_names"] = bundle_.class_names;
    j["operating_points"] = bundle_.operating_points;
    j["preprocess"] = {{"target_size", bundle_.preprocess.target_size},
                       {"mean", bundle_.preprocess.mean},
                       {"std", bundle_.preprocess.std},
                       {"grayscale", bundle_.preprocess.grayscale}};
    j["parameters"] = net_.param_count();
    j["layers"] = bundle_.graph.layers.size();
    j["cam_compatible"] = cam_compatible();
    j["verification"] = {{"fixtures", bundle_.fixtures.size()},
                         {"max_abs_diff", report_.max_abs_diff},
                         {"tolerance", bundle_verify_tolerance}};
    if (bundle_.ood)
      j["ood"] = {{"metric", to_string(bundle_.ood->metric)},
                  {"threshold", bundle_.ood->threshold},
                  {"input_size", bundle_.ood->preprocess.target_size},
                  {"enabled", gate_enabled()}};
    else
      j["ood"] = nullptr;
    return json_response(j);
  }

  Response predict(std::string_view body) const {
    return guarded([&] {
      const Image img = decode_image(bytes(body));
      nlohmann::json j;
      if (ae_) {
        const auto [verdict, recon] = gate(img);
        j["ood"] = verdict_json(verdict, recon);
        if (!verdict.admitted) return json_response(j);
      } else {
        j["ood"] = nullptr;
      }
      const std::vector<double> probs = predict_probabilities(net_, bundle_.weights, bundle_.preprocess, img);
      j["classes"] = nlohmann::json::array();
      for (std::size_t c = 0; c < probs.size(); ++c) {
        const double op = bundle_.operating_points[c];
        j["classes"].push_back({{"name", bundle_.class_names[c]},
                                {"raw_probability", probs[c]},
                                {"calibrated_probability", calibrate(probs[c], op)},
                                {"operating_point", op}});
      }
      return json_response(j);
    });
  }

  Response ood(std::string_view body) const {
    return guarded([&] {
      if (!bundle_.ood) fail(ErrorCode::InvalidConfig, "bundle has no autoencoder");
      const Image img = decode_image(bytes(body));
      const Autoencoder ae = ae_ ? *ae_ : Autoencoder::from(*bundle_.ood);
      const auto [verdict, recon] = gate(img, ae);
      nlohmann::json j = verdict_json(verdict, recon);
      j["scores"] = recon.scores_json();
      return json_response(j);
    });
  }

  /// `cls` is a class index, a class name, or "all"; `format` is "png"
  /// (composited overlay) or "json" (raw map).
  Response explain(std::string_view body, const std::string& cls, const std::string& method,
                   const std::string& format = "png") const {
    return guarded([&] {
      const ExplainMethod m = explain_method_from_string(method.empty() ? "saliency" : method);
      if (format != "png" && format != "json") fail(ErrorCode::InvalidConfig, "format must be png or json");
      const std::optional<std::size_t> index = parse_class(cls);
      const Image img = decode_image(bytes(body));
      if (ae_) {
        const auto [verdict, recon] = gate(img);
        if (!verdict.admitted) {
          nlohmann::json j{{"ood", verdict_json(verdict, recon)}};
          return json_response(j, 422);
        }
      }
      const Explanation e = xray::explain(bundle_, img, m, index);
      if (format == "png") return Response{200, "image/png", png_string(e.overlay().composite())};
      nlohmann::json j = e.sidecar();
      j["values"] = e.heatmap.values;
      return json_response(j);
    });
  }

 private:
  static std::span<const std::uint8_t> bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
  }

  template <class F>
  static Response guarded(F&& f) {
    try {
      return f();
    } catch (const Error& e) {
      return error_response(e);
    }
  }

  bool cam_compatible() const {
    try {
      cam_head(net_);
      return true;
    } catch (const Error&) {
      return false;
    }
  }

  std::optional<std::size_t> parse_class(const std::string& cls) const {
    if (cls.empty() || cls == "all") return std::nullopt;
    for (std::size_t i = 0; i < bundle_.class_names.size(); ++i)
      if (bundle_.class_names[i] == cls) return i;
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(cls, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != cls.size() || cls.empty() || cls[0] == '-')
      fail(ErrorCode::BadClassIndex, "unknown class '" + cls + "'");
    if (v >= bundle_.class_names.size()) fail(ErrorCode::BadClassIndex, "class index " + cls + " out of range");
    return v;
  }

  std::pair<OodVerdict, ReconstructionResult> gate(const Image& img) const { return gate(img, *ae_); }

  std::pair<OodVerdict, ReconstructionResult> gate(const Image& img, const Autoencoder& ae) const {
    const OodModel& m = *bundle_.ood;
    const Image x = scale_and_crop(to_grayscale(img), m.preprocess);
    ReconstructionResult r = reconstruct(ae, x, m.latent_reference);
    return {decide(r.score(m.metric), m.threshold, m.metric), std::move(r)};
  }

  static nlohmann::json verdict_json(const OodVerdict& v, const ReconstructionResult& r) {
    nlohmann::json j = v.to_json();
    if (!v.admitted) j["error_map_png"] = httplib::detail::base64_encode(png_string(r.error_map));
    return j;
  }

  ModelBundle bundle_;
  Network net_;
  std::optional<Autoencoder> ae_;
  DiffReport report_;
};

/// Image bytes from a multipart upload (field "image", else the first
/// file) or the raw body.
inline std::string request_image(const httplib::Request& req) {
  if (req.is_multipart_form_data()) {
    if (req.has_file("image")) return req.get_file_value("image").content;
    if (!req.files.empty()) return req.files.begin()->second.content;
    return {};
  }
  return req.body;
}

inline void install_routes(httplib::Server& svr, const Service& service, std::size_t max_upload) {
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  svr.set_payload_max_length(max_upload);
  svr.Get("/health", [&service, reply](const httplib::Request&, httplib::Response& res) { reply(res, service.health()); });
  svr.Get("/model/info",
          [&service, reply](const httplib::Request&, httplib::Response& res) { reply(res, service.model_info()); });
  svr.Post("/predict", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.predict(request_image(req)));
  });
  svr.Post("/ood", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.ood(request_image(req)));
  });
  svr.Post("/explain", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    const std::string format = req.has_param("format") ? req.get_param_value("format") : "png";
    reply(res, service.explain(request_image(req), req.get_param_value("class"), req.get_param_value("method"), format));
  });
}

/// Blocks until the server stops. `on_ready` receives the bound port.
inline void serve(const ServiceConfig& cfg, const std::function<void(int)>& on_ready = {}) {
  cfg.validate();
  const Service service = Service::load(cfg.bundle_path, cfg.ood_gate);
  httplib::Server svr;
  install_routes(svr, service, cfg.max_upload_bytes);
  const int port = cfg.port == 0 ? svr.bind_to_any_port(cfg.bind_address)
                                 : (svr.bind_to_port(cfg.bind_address, cfg.port) ? cfg.port : -1);
  if (port < 0) fail(ErrorCode::InvalidConfig, "cannot bind " + cfg.bind_address + ":" + std::to_string(cfg.port));
  if (on_ready) on_ready(port);
  svr.listen_after_bind();
}

}  // namespace xray
