#pragma once

#include "medcoder/types.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace medcoder {

struct CodeEntry {
  std::string code;
  std::string description;
  std::vector<std::string> synonyms;
};

// Ordered code set; position j is the label-vector index for the run.
struct CodeCatalog {
  std::vector<CodeEntry> codes;

  int size() const { return static_cast<int>(codes.size()); }
  int index_of(const std::string& code) const;

  std::string to_json() const;
  static CodeCatalog from_json(const std::string& text);
  static CodeCatalog load(const std::string& path);
  void save(const std::string& path) const;
};

struct LabEvent {
  std::string test_id;
  bool abnormal = false;
};

struct ChartEvent {
  std::string measure_id;
  double value = 0.0;
};

struct MicroEvent {
  std::string organism_id;
  bool positive = false;
};

struct AdmissionRecord {
  std::string admission_id;
  std::string patient_id;
  std::vector<std::string> notes;
  std::vector<std::string> diagnosis_phrases;
  std::vector<LabEvent> lab_events;
  std::vector<ChartEvent> chart_events;
  std::vector<std::string> medications;
  std::vector<MicroEvent> micro_events;
  IntVector labels;  // length C

  bool operator==(const AdmissionRecord&) const;
};

inline bool operator==(const LabEvent& a, const LabEvent& b) {
  return a.test_id == b.test_id && a.abnormal == b.abnormal;
}
inline bool operator==(const ChartEvent& a, const ChartEvent& b) {
  return a.measure_id == b.measure_id && a.value == b.value;
}
inline bool operator==(const MicroEvent& a, const MicroEvent& b) {
  return a.organism_id == b.organism_id && a.positive == b.positive;
}

struct IngestSummary {
  long admissions_loaded = 0;
  long admissions_dropped = 0;
  long admission_rows = 0;
  long orphan_rows_dropped = 0;  // rows whose HADM_ID is not in ADMISSIONS
  long malformed_rows = 0;
  std::map<std::string, long> rows_per_table;
};

// Reads ADMISSIONS/NOTEEVENTS/LABEVENTS/PRESCRIPTIONS/MICROBIOLOGYEVENTS/
// CHARTEVENTS(.csv) plus the LABELS sidecar from `directory`. Rows referencing
// unknown admissions are dropped and counted; any missing table file is fatal.
std::vector<AdmissionRecord> load_tables(const std::string& directory,
                                         const CodeCatalog& catalog,
                                         IngestSummary* summary = nullptr);

// Writes the same CSV layout load_tables reads; round-trips losslessly.
void write_tables(const std::string& directory, const CodeCatalog& catalog,
                  const std::vector<AdmissionRecord>& records);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static DatasetSplit from_json(const std::string& text);
};

// Patients are shuffled by seed and assigned greedily so admission-count
// proportions track the ratios; all admissions of a patient land together.
DatasetSplit split_by_patient(const std::vector<AdmissionRecord>& records,
                              const std::array<double, 3>& ratios,
                              std::uint64_t seed);

// Per-code planted signal for the synthetic corpus; the same structure is
// emitted as the answer key for explainer tests.
struct PlantedCode {
  std::string code;
  std::string description;
  std::vector<std::string> synonyms;
  std::string keyword;               // phrase planted in notes of positives
  std::vector<std::string> lab_features;
  std::vector<std::string> med_features;
  double prevalence = 0.3;
};

struct GeneratorConfig {
  std::vector<PlantedCode> codes;
  int admissions = 500;
  int patients = 200;
  double p_diag = 0.95;    // chance a positive code contributes a diagnosis phrase
  double p_signal = 0.95;  // chance a positive code sets its informative features
  double background_flip = 0.03;
  int note_tokens = 60;    // background tokens per note
  int noise_vocab = 150;

  CodeCatalog catalog() const;
  std::string to_json() const;
  static GeneratorConfig from_json(const std::string& text);
  static GeneratorConfig load(const std::string& path);
};

std::vector<AdmissionRecord> generate_synthetic(const GeneratorConfig& config,
                                                std::uint64_t seed);

// A ready-made five-code config used by fixtures and the acceptance runs.
GeneratorConfig default_synthetic_config();

}  // namespace medcoder
