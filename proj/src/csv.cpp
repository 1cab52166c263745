#include "matchnet/csv.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "matchnet/errors.hpp"
#include "matchnet/text.hpp"

namespace matchnet {

namespace {

constexpr std::array<std::string_view, 6> kFixedColumns = {
    "patient_id", "time_years", "event_observed", "observed_time_years", "baseline_event", "diagnosis"};

enum class ColumnKind { Longitudinal, StaticNumeric, StaticCategorical };

struct Column {
    ColumnKind kind;
    std::size_t index;  // within its kind
};

struct PendingVisit {
    Visit visit;
    std::size_t line;
};

struct PendingPatient {
    PatientRecord record;
    std::vector<PendingVisit> visits;
    std::size_t first_line = 0;
};

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& what) {
    throw FormatError(source + ":" + std::to_string(line) + ": " + what);
}

} // namespace

Dataset read_dataset_csv(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) {
        fail(source, 1, "missing header row");
    }
    ++line_no;
    const auto header = split(trim(line), ',');
    if (header.size() < kFixedColumns.size()) {
        fail(source, line_no, "header has " + std::to_string(header.size()) + " columns, need at least 6");
    }
    for (std::size_t i = 0; i < kFixedColumns.size(); ++i) {
        if (trim(header[i]) != kFixedColumns[i]) {
            fail(source, line_no, "column " + std::to_string(i + 1) + " must be '" +
                                      std::string(kFixedColumns[i]) + "'");
        }
    }

    Dataset ds;
    std::vector<Column> columns;
    for (std::size_t i = kFixedColumns.size(); i < header.size(); ++i) {
        const auto name = std::string(trim(header[i]));
        if (name.rfind("static:", 0) == 0) {
            columns.push_back({ColumnKind::StaticNumeric, ds.schema.static_numeric.size()});
            ds.schema.static_numeric.push_back(name.substr(7));
        } else if (name.rfind("cat:", 0) == 0) {
            columns.push_back({ColumnKind::StaticCategorical, ds.schema.static_categorical.size()});
            ds.schema.static_categorical.push_back(name.substr(4));
        } else if (!name.empty()) {
            columns.push_back({ColumnKind::Longitudinal, ds.schema.longitudinal.size()});
            ds.schema.longitudinal.push_back(name);
        } else {
            fail(source, line_no, "empty feature column name");
        }
    }

    std::vector<PendingPatient> pending;
    std::map<std::string, std::size_t> index_of;
    while (std::getline(in, line)) {
        ++line_no;
        const auto row_text = trim(line);
        if (row_text.empty()) {
            continue;
        }
        const auto cells = split(row_text, ',');
        if (cells.size() != header.size()) {
            fail(source, line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                      std::to_string(cells.size()));
        }
        const std::string id(trim(cells[0]));
        if (id.empty()) {
            fail(source, line_no, "empty patient_id");
        }
        const auto time = parse_double(cells[1]);
        const auto event = parse_bool(cells[2]);
        const auto observed = parse_double(cells[3]);
        const auto baseline = parse_bool(cells[4]);
        if (!time || !std::isfinite(*time) || *time < 0.0) {
            fail(source, line_no, "time_years must be a non-negative number");
        }
        if (!event || !baseline) {
            fail(source, line_no, "event_observed and baseline_event must be 0/1");
        }
        if (!observed || !std::isfinite(*observed) || *observed < 0.0) {
            fail(source, line_no, "observed_time_years must be a non-negative number");
        }

        auto [it, inserted] = index_of.try_emplace(id, pending.size());
        if (inserted) {
            PendingPatient p;
            p.record.patient_id = id;
            p.record.observed_time = *observed;
            p.record.event_observed = *event;
            p.record.baseline_event = *baseline;
            p.record.static_numeric.assign(ds.schema.static_numeric.size(), std::nullopt);
            p.record.static_categorical.assign(ds.schema.static_categorical.size(), std::nullopt);
            p.first_line = line_no;
            pending.push_back(std::move(p));
        }
        PendingPatient& p = pending[it->second];
        if (p.record.observed_time != *observed || p.record.event_observed != *event ||
            p.record.baseline_event != *baseline) {
            fail(source, line_no, "outcome columns disagree with line " + std::to_string(p.first_line) +
                                      " for patient " + id);
        }

        Visit visit;
        visit.time = *time;
        visit.measurements.assign(ds.schema.longitudinal.size(), std::nullopt);
        if (const auto diag = trim(cells[5]); !diag.empty()) {
            visit.diagnosis = std::string(diag);
        }
        for (std::size_t c = 0; c < columns.size(); ++c) {
            const auto cell = trim(cells[kFixedColumns.size() + c]);
            if (cell.empty()) {
                continue;
            }
            const Column& col = columns[c];
            if (col.kind == ColumnKind::StaticCategorical) {
                auto& slot = p.record.static_categorical[col.index];
                if (slot && *slot != cell) {
                    fail(source, line_no, "static feature '" + ds.schema.static_categorical[col.index] +
                                              "' changes within patient " + id);
                }
                slot = std::string(cell);
                continue;
            }
            const auto value = parse_double(cell);
            if (!value || !std::isfinite(*value)) {
                fail(source, line_no, "non-numeric value '" + std::string(cell) + "' in column " +
                                          std::string(trim(header[kFixedColumns.size() + c])));
            }
            if (col.kind == ColumnKind::StaticNumeric) {
                auto& slot = p.record.static_numeric[col.index];
                if (slot && *slot != *value) {
                    fail(source, line_no, "static feature '" + ds.schema.static_numeric[col.index] +
                                              "' changes within patient " + id);
                }
                slot = *value;
            } else {
                visit.measurements[col.index] = *value;
            }
        }
        p.visits.push_back({std::move(visit), line_no});
    }

    for (auto& p : pending) {
        std::stable_sort(p.visits.begin(), p.visits.end(),
                         [](const PendingVisit& a, const PendingVisit& b) { return a.visit.time < b.visit.time; });
        for (std::size_t i = 1; i < p.visits.size(); ++i) {
            if (p.visits[i].visit.time == p.visits[i - 1].visit.time) {
                fail(source, p.visits[i].line, "duplicate visit time for patient " + p.record.patient_id);
            }
        }
        for (auto& v : p.visits) {
            p.record.visits.push_back(std::move(v.visit));
        }
        ds.patients.push_back(std::move(p.record));
    }
    return ds;
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return read_dataset_csv(in, path.string());
}

void write_dataset_csv(std::ostream& out, const Dataset& dataset) {
    const auto& schema = dataset.schema;
    out << "patient_id,time_years,event_observed,observed_time_years,baseline_event,diagnosis";
    for (const auto& n : schema.longitudinal) {
        out << ',' << n;
    }
    for (const auto& n : schema.static_numeric) {
        out << ",static:" << n;
    }
    for (const auto& n : schema.static_categorical) {
        out << ",cat:" << n;
    }
    out << '\n';
    for (const auto& p : dataset.patients) {
        for (const auto& v : p.visits) {
            out << p.patient_id << ',' << format_double(v.time) << ',' << (p.event_observed ? 1 : 0)
                << ',' << format_double(p.observed_time) << ',' << (p.baseline_event ? 1 : 0) << ','
                << v.diagnosis.value_or("");
            for (const auto& m : v.measurements) {
                out << ',';
                if (m) {
                    out << format_double(*m);
                }
            }
            for (const auto& s : p.static_numeric) {
                out << ',';
                if (s) {
                    out << format_double(*s);
                }
            }
            for (const auto& s : p.static_categorical) {
                out << ',' << s.value_or("");
            }
            out << '\n';
        }
    }
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& dataset) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    write_dataset_csv(out, dataset);
}

} // namespace matchnet
