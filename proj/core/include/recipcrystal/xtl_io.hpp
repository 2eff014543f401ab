#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "recipcrystal/crystal.hpp"
#include "recipcrystal/fourier.hpp"
#include "recipcrystal/recovery.hpp"

namespace recip {

inline constexpr int kXtlSchemaVersion = 1;

// One crystal per line: lattice (9 reals, row-major), grid denominator, and
// per-species integer coordinate numerators. Roundtrips bit-exactly.
struct XtlSpecies {
  int z = 0;
  std::vector<GridCoord> coords;

  bool operator==(const XtlSpecies&) const = default;
};

struct XtlJsonRecord {
  int schema_version = kXtlSchemaVersion;
  std::array<double, 9> lattice{1, 0, 0, 0, 1, 0, 0, 0, 1};
  int grid_denominator = 48;
  std::vector<XtlSpecies> species;  // sorted by z

  bool operator==(const XtlJsonRecord&) const = default;
};

XtlJsonRecord crystal_to_record(const Crystal& c);
Crystal record_to_crystal(const XtlJsonRecord& r);  // throws ParseError on invalid data

std::string serialize_xtl(const XtlJsonRecord& r);
XtlJsonRecord parse_xtl(const std::string& line);  // throws ParseError

std::vector<XtlJsonRecord> read_xtl_file(const std::string& path);  // names the bad line
void write_xtl_file(const std::string& path, const std::vector<XtlJsonRecord>& records);

// Preprocessed archive entry: snapped crystal plus its truncated Fourier
// matrix (row-major |W| x 6 complex pairs) in identity slot order.
struct ArchiveEntry {
  std::string id;
  XtlJsonRecord crystal;
  int jmax = 0;
  std::string truncation = "cubic";
  std::array<int, kMaxSpecies> slot_species{0, 0, 0, 0, 0, 0};
  std::vector<cdouble> coeffs;
};

std::string serialize_archive_entry(const ArchiveEntry& e);
ArchiveEntry parse_archive_entry(const std::string& line);
std::vector<ArchiveEntry> read_archive(const std::string& path);  // throws ArchiveCorrupt

// Standalone coefficient records for the recover subcommand.
struct FourierJsonRecord {
  std::string id;
  int jmax = 0;
  std::string truncation = "cubic";
  int gpd = 48;
  std::array<int, kMaxSpecies> slot_species{0, 0, 0, 0, 0, 0};
  std::vector<cdouble> coeffs;  // row-major |W| x 6
  std::optional<std::array<double, 9>> lattice;
};

std::string serialize_fourier_record(const FourierJsonRecord& r);
FourierJsonRecord parse_fourier_record(const std::string& line);
std::vector<FourierJsonRecord> read_fourier_file(const std::string& path);

FourierRepr fourier_record_to_repr(const FourierJsonRecord& r);
FourierJsonRecord repr_to_fourier_record(const FourierRepr& fr, const std::string& id, int gpd);

// Screening results. Buckets: <=16, 17-32, 33-48, 49-64, >64 atoms per cell.
struct StructureScreenResult {
  std::string id;
  RecoveryStage stage = RecoveryStage::failed;
  int newton_iters = 0;
  double residual = 0.0;
  bool recoverable = false;
  int atoms = 0;
};

inline constexpr int kAtomBuckets = 5;
int atom_bucket(int atoms);
std::string atom_bucket_label(int bucket);

struct ScreenReport {
  std::vector<StructureScreenResult> structures;
  std::array<int, 3> stage_counts{0, 0, 0};  // recovered at stage 1 / 2 / 3
  int unrecoverable = 0;
  std::array<int, kAtomBuckets> histogram{};
  int total() const {
    return stage_counts[0] + stage_counts[1] + stage_counts[2] + unrecoverable;
  }
};

ScreenReport make_screen_report(std::vector<StructureScreenResult> results);
void write_screen_report_json(const ScreenReport& r, const std::string& path, int jmax);
void write_screen_report_csv(const ScreenReport& r, const std::string& path);

const char* stage_name(RecoveryStage s);

}  // namespace recip
