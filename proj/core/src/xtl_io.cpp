#include "recipcrystal/xtl_io.hpp"

#include <fstream>

#include <json.hpp>

#include "recipcrystal/errors.hpp"

namespace recip {

using nlohmann::json;

namespace {

json coords_to_json(const std::vector<GridCoord>& coords) {
  json arr = json::array();
  for (const GridCoord& g : coords) arr.push_back({g[0], g[1], g[2]});
  return arr;
}

std::vector<GridCoord> coords_from_json(const json& arr) {
  std::vector<GridCoord> out;
  for (const auto& v : arr) {
    if (!v.is_array() || v.size() != 3) throw ParseError("coordinate must be [nx, ny, nz]");
    out.push_back({v[0].get<int>(), v[1].get<int>(), v[2].get<int>()});
  }
  return out;
}

json coeffs_to_json(const std::vector<cdouble>& coeffs) {
  json arr = json::array();
  for (const cdouble& c : coeffs) arr.push_back({c.real(), c.imag()});
  return arr;
}

std::vector<cdouble> coeffs_from_json(const json& arr) {
  std::vector<cdouble> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_array() || v.size() != 2) throw ParseError("coefficient must be [re, im]");
    out.emplace_back(v[0].get<double>(), v[1].get<double>());
  }
  return out;
}

json parse_line(const std::string& line) {
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ParseError("malformed JSON");
  if (!j.is_object()) throw ParseError("expected a JSON object");
  if (!j.contains("schema_version")) throw ParseError("missing schema_version");
  return j;
}

Truncation truncation_from(const std::string& s) {
  if (s == "cubic") return Truncation::cubic;
  if (s == "spherical") return Truncation::spherical;
  throw ParseError("unknown truncation: " + s);
}

}  // namespace

XtlJsonRecord crystal_to_record(const Crystal& c) {
  XtlJsonRecord r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r.lattice[3 * i + j] = c.lattice.m(i, j);
  }
  r.grid_denominator = c.grid_denominator;
  for (std::size_t s = 0; s < c.species.entries.size(); ++s) {
    r.species.push_back({c.species.entries[s].atomic_number, c.coords[s]});
  }
  return r;
}

Crystal record_to_crystal(const XtlJsonRecord& r) {
  Crystal c;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) c.lattice.m(i, j) = r.lattice[3 * i + j];
  }
  c.grid_denominator = r.grid_denominator;
  for (const XtlSpecies& s : r.species) {
    c.species.entries.push_back({s.z, static_cast<int>(s.coords.size())});
    c.coords.push_back(s.coords);
  }
  const auto violations = validate_crystal(c);
  if (!violations.empty()) throw ParseError("invalid crystal: " + violations.front());
  return c;
}

std::string serialize_xtl(const XtlJsonRecord& r) {
  json j;
  j["schema_version"] = r.schema_version;
  j["lattice"] = r.lattice;
  j["grid_denominator"] = r.grid_denominator;
  json species = json::array();
  for (const XtlSpecies& s : r.species) {
    species.push_back({{"z", s.z}, {"coords", coords_to_json(s.coords)}});
  }
  j["species"] = std::move(species);
  return j.dump();
}

XtlJsonRecord parse_xtl(const std::string& line) {
  const json j = parse_line(line);
  XtlJsonRecord r;
  try {
    r.schema_version = j.at("schema_version").get<int>();
    const auto& lat = j.at("lattice");
    if (!lat.is_array() || lat.size() != 9) throw ParseError("lattice must have 9 entries");
    for (int i = 0; i < 9; ++i) r.lattice[i] = lat[i].get<double>();
    r.grid_denominator = j.at("grid_denominator").get<int>();
    for (const auto& s : j.at("species")) {
      r.species.push_back({s.at("z").get<int>(), coords_from_json(s.at("coords"))});
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad XTL record: ") + e.what());
  }
  return r;
}

std::vector<XtlJsonRecord> read_xtl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  std::vector<XtlJsonRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_xtl(line));
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_xtl_file(const std::string& path, const std::vector<XtlJsonRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& r : records) out << serialize_xtl(r) << "\n";
}

std::string serialize_archive_entry(const ArchiveEntry& e) {
  json j;
  j["schema_version"] = kXtlSchemaVersion;
  j["id"] = e.id;
  j["crystal"] = json::parse(serialize_xtl(e.crystal));
  j["jmax"] = e.jmax;
  j["truncation"] = e.truncation;
  j["slots"] = e.slot_species;
  j["coeffs"] = coeffs_to_json(e.coeffs);
  return j.dump();
}

ArchiveEntry parse_archive_entry(const std::string& line) {
  const json j = parse_line(line);
  ArchiveEntry e;
  try {
    e.id = j.at("id").get<std::string>();
    e.crystal = parse_xtl(j.at("crystal").dump());
    e.jmax = j.at("jmax").get<int>();
    e.truncation = j.at("truncation").get<std::string>();
    truncation_from(e.truncation);
    const auto& slots = j.at("slots");
    for (int i = 0; i < kMaxSpecies; ++i) e.slot_species[i] = slots[i].get<int>();
    e.coeffs = coeffs_from_json(j.at("coeffs"));
  } catch (const json::exception& ex) {
    throw ParseError(std::string("bad archive entry: ") + ex.what());
  }
  const WaveSet ws = build_wave_set(truncation_from(e.truncation), e.jmax);
  if (e.coeffs.size() != static_cast<std::size_t>(ws.size()) * kMaxSpecies) {
    throw ParseError("archive entry coefficient count does not match wave set");
  }
  return e;
}

std::vector<ArchiveEntry> read_archive(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArchiveCorrupt("cannot open archive: " + path);
  std::vector<ArchiveEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_archive_entry(line));
    } catch (const ParseError& e) {
      throw ArchiveCorrupt(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string serialize_fourier_record(const FourierJsonRecord& r) {
  json j;
  j["schema_version"] = kXtlSchemaVersion;
  j["id"] = r.id;
  j["jmax"] = r.jmax;
  j["truncation"] = r.truncation;
  j["gpd"] = r.gpd;
  j["slots"] = r.slot_species;
  j["coeffs"] = coeffs_to_json(r.coeffs);
  if (r.lattice) j["lattice"] = *r.lattice;
  return j.dump();
}

FourierJsonRecord parse_fourier_record(const std::string& line) {
  const json j = parse_line(line);
  FourierJsonRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.jmax = j.at("jmax").get<int>();
    r.truncation = j.at("truncation").get<std::string>();
    r.gpd = j.at("gpd").get<int>();
    const auto& slots = j.at("slots");
    for (int i = 0; i < kMaxSpecies; ++i) r.slot_species[i] = slots[i].get<int>();
    r.coeffs = coeffs_from_json(j.at("coeffs"));
    if (j.contains("lattice")) {
      std::array<double, 9> lat;
      for (int i = 0; i < 9; ++i) lat[i] = j.at("lattice")[i].get<double>();
      r.lattice = lat;
    }
  } catch (const json::exception& ex) {
    throw ParseError(std::string("bad fourier record: ") + ex.what());
  }
  const WaveSet ws = build_wave_set(truncation_from(r.truncation), r.jmax);
  if (r.coeffs.size() != static_cast<std::size_t>(ws.size()) * kMaxSpecies) {
    throw ParseError("fourier record coefficient count does not match wave set");
  }
  return r;
}

std::vector<FourierJsonRecord> read_fourier_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  std::vector<FourierJsonRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_fourier_record(line));
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

FourierRepr fourier_record_to_repr(const FourierJsonRecord& r) {
  FourierRepr fr;
  fr.wave_set = build_wave_set(truncation_from(r.truncation), r.jmax);
  fr.slot_species = r.slot_species;
  fr.coeffs = r.coeffs;
  return fr;
}

FourierJsonRecord repr_to_fourier_record(const FourierRepr& fr, const std::string& id,
                                         int gpd) {
  FourierJsonRecord r;
  r.id = id;
  r.jmax = fr.wave_set.jmax;
  r.truncation = fr.wave_set.truncation == Truncation::cubic ? "cubic" : "spherical";
  r.gpd = gpd;
  r.slot_species = fr.slot_species;
  r.coeffs = fr.coeffs;
  return r;
}

int atom_bucket(int atoms) {
  if (atoms <= 16) return 0;
  if (atoms <= 32) return 1;
  if (atoms <= 48) return 2;
  if (atoms <= 64) return 3;
  return 4;
}

std::string atom_bucket_label(int bucket) {
  switch (bucket) {
    case 0: return "<=16";
    case 1: return "17-32";
    case 2: return "33-48";
    case 3: return "49-64";
    default: return ">64";
  }
}

const char* stage_name(RecoveryStage s) {
  switch (s) {
    case RecoveryStage::stage1: return "1";
    case RecoveryStage::stage2: return "2";
    case RecoveryStage::stage3: return "3";
    default: return "failed";
  }
}

ScreenReport make_screen_report(std::vector<StructureScreenResult> results) {
  ScreenReport r;
  r.structures = std::move(results);
  for (const auto& s : r.structures) {
    if (s.recoverable) {
      r.stage_counts[static_cast<int>(s.stage) - 1] += 1;
    } else {
      r.unrecoverable += 1;
    }
    r.histogram[atom_bucket(s.atoms)] += 1;
  }
  return r;
}

void write_screen_report_json(const ScreenReport& r, const std::string& path, int jmax) {
  json j;
  j["schema_version"] = kXtlSchemaVersion;
  j["jmax"] = jmax;
  j["total"] = r.total();
  json structures = json::array();
  for (const auto& s : r.structures) {
    structures.push_back({{"id", s.id},
                          {"stage_reached", stage_name(s.stage)},
                          {"newton_iters", s.newton_iters},
                          {"residual", s.residual},
                          {"recoverable", s.recoverable},
                          {"atoms", s.atoms}});
  }
  j["structures"] = std::move(structures);
  json hist;
  for (int b = 0; b < kAtomBuckets; ++b) hist[atom_bucket_label(b)] = r.histogram[b];
  j["aggregate"] = {{"stage1", r.stage_counts[0]},
                    {"stage2", r.stage_counts[1]},
                    {"stage3", r.stage_counts[2]},
                    {"unrecoverable", r.unrecoverable},
                    {"histogram", std::move(hist)}};
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

void write_screen_report_csv(const ScreenReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << "id,stage_reached,newton_iters,residual,recoverable,atoms\n";
  for (const auto& s : r.structures) {
    out << s.id << ',' << stage_name(s.stage) << ',' << s.newton_iters << ',' << s.residual
        << ',' << (s.recoverable ? "true" : "false") << ',' << s.atoms << "\n";
  }
}

}  // namespace recip
