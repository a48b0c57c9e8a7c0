#pragma once

// File emission: CSV tables with shortest round-trip float formatting and
// JSON summaries (nlohmann::ordered_json keeps key order stable).

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "diagnostics.hpp"
#include "model.hpp"

namespace sbm {

using Json = nlohmann::ordered_json;

/// Shortest decimal that parses back to the same double; nan/inf spelled out.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) x = 0.0;  // drop the sign of -0
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

inline Json json_number(std::optional<double> x) {
  if (!x || !std::isfinite(*x)) return nullptr;
  return *x == 0.0 ? 0.0 : *x;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  CsvWriter& header(std::initializer_list<const char*> cols) {
    bool first = true;
    for (const char* c : cols) {
      if (!first) out_ << ',';
      out_ << c;
      first = false;
    }
    out_ << '\n';
    return *this;
  }

  CsvWriter& cell(double x) { return raw(format_double(x)); }
  CsvWriter& cell(std::uint64_t x) { return raw(std::to_string(x)); }
  CsvWriter& cell(const std::string& s) { return raw(s); }
  CsvWriter& cell(const char* s) { return raw(s); }

  void end_row() {
    out_ << '\n';
    fresh_ = true;
  }

 private:
  CsvWriter& raw(const std::string& s) {
    if (!fresh_) out_ << ',';
    out_ << s;
    fresh_ = false;
    return *this;
  }
  std::ostream& out_;
  bool fresh_ = true;
};

inline void write_frames_csv(std::ostream& out, const std::vector<DiagnosticsFrame>& frames) {
  CsvWriter w(out);
  w.header({"t", "delta_x", "psi", "sup_omega", "sup_dzrho", "sup_dxu", "min_K", "max_K", "min_D",
            "I_omega", "I_drho", "I_dxu", "dt", "quality"});
  for (const auto& f : frames) {
    w.cell(f.t).cell(f.delta_x).cell(f.psi).cell(f.sup_omega).cell(f.sup_dzrho).cell(f.sup_dxu);
    w.cell(f.min_K).cell(f.max_K).cell(f.min_D).cell(f.I_omega).cell(f.I_drho).cell(f.I_dxu);
    w.cell(f.dt).cell(static_cast<std::uint64_t>(f.quality));
    w.end_row();
  }
}

inline void write_profile_csv(std::ostream& out, const LagrangianState& s) {
  CsvWriter w(out);
  w.header({"z", "rho0", "phi_final", "omega_final", "D_final"});
  for (const auto& m : s.markers) {
    w.cell(m.z).cell(m.rho).cell(m.phi).cell(m.omega).cell(m.D);
    w.end_row();
  }
}

inline Json to_json(const ModelParams& p) {
  Json j;
  j["beta1"] = p.beta1;
  j["beta2"] = p.beta2;
  j["gamma1"] = p.gamma1;
  j["gamma2"] = p.gamma2;
  j["epsilon"] = json_number(p.epsilon);
  j["blow_up_range"] = p.blow_up_range;
  return j;
}

inline Json to_json(const InitialDataSpec& s) {
  Json j;
  j["frame"] = to_string(s.frame);
  j["L0"] = s.L0;
  j["L1"] = s.L1;
  j["L2"] = s.L2;
  j["L3"] = s.L3;
  j["L4"] = s.L4;
  j["n_markers"] = s.n_markers;
  j["plateau"] = Json::array({s.plateau_lo, s.plateau_hi});
  j["ramp"] = s.warmup_ramp;
  j["amplitude"] = s.amplitude;
  return j;
}

inline std::filesystem::path ensure_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

template <class Fn>
void write_file(const std::filesystem::path& path, Fn&& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  body(f);
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace sbm
