#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "glyphnet/arith.hpp"
#include "glyphnet/errors.hpp"
#include "glyphnet/graph.hpp"
#include "glyphnet/util.hpp"

namespace glyphnet {

// One row of the static analysis: output maps, spatial size, kernel,
// trainable parameter count and connection count for a node.
struct LayerReport {
  std::string id;
  std::string kind;
  std::uint64_t maps = 0;
  std::string size;    // "HxW", "1x1" for flat rows
  std::string kernel;  // "FxF", "2x2" for pools, "-" when not applicable
  std::uint64_t params = 0;
  std::uint64_t connections = 0;
};

struct SummaryReport {
  std::string name;
  std::vector<LayerReport> rows;
  std::uint64_t total_params = 0;
};

inline std::string format_millions(std::uint64_t params) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << static_cast<double>(params) / 1e6 << "M";
  return os.str();
}

// Walks the spec in node order applying the shape and parameter
// arithmetic; pooling, activation and wiring nodes carry zero parameters.
inline SummaryReport summarize(const ArchitectureSpec& spec) {
  const auto shapes = infer_shapes(spec, /*require_classifier_output=*/false);
  SummaryReport report;
  report.name = spec.name;

  auto size_string = [](const NodeShape& s) {
    if (!s.spatial) return std::string("1x1");
    return std::to_string(s.h) + "x" + std::to_string(s.w);
  };

  {
    LayerReport row;
    row.id = "input";
    row.kind = "input";
    row.maps = spec.input_shape.c;
    row.size = std::to_string(spec.input_shape.h) + "x" + std::to_string(spec.input_shape.w);
    row.kernel = "-";
    report.rows.push_back(row);
  }

  for (const NodeConfig& node : spec.nodes) {
    const NodeShape& out = shapes.at(node.id);
    const NodeShape& in = shapes.at(node.inputs[0]);
    LayerReport row;
    row.id = node.id;
    row.kind = kind_name(node.kind);
    row.maps = out.c;
    row.size = size_string(out);
    row.kernel = "-";
    switch (node.kind) {
      case NodeKind::conv: {
        row.kernel = std::to_string(node.conv_kernel) + "x" + std::to_string(node.conv_kernel);
        row.params = node.conv_bias
                         ? params_bias(node.conv_kernel, in.c, node.conv_out, BiasRule::standard)
                         : params_nobias(node.conv_kernel, in.c, node.conv_out);
        row.connections = static_cast<std::uint64_t>(out.h) * out.w *
                          (node.conv_kernel * node.conv_kernel + 1) * node.conv_out;
        break;
      }
      case NodeKind::maxpool:
      case NodeKind::avgpool:
        row.kernel = "2x2";
        break;
      case NodeKind::batchnorm:
        row.params = 2 * static_cast<std::uint64_t>(in.c);
        break;
      case NodeKind::dense: {
        const std::uint64_t in_dim = in.flat_dim();
        row.params = in_dim * node.dense_units +
                     (node.dense_bias ? static_cast<std::uint64_t>(node.dense_units) : 0);
        row.connections = (in_dim + 1) * node.dense_units;
        break;
      }
      default:
        break;
    }
    report.total_params += row.params;
    report.rows.push_back(row);
  }
  return report;
}

inline std::string render_csv(const SummaryReport& report) {
  std::ostringstream os;
  os << "id,kind,maps,size,kernel,params,connections\n";
  for (const LayerReport& r : report.rows) {
    os << r.id << "," << r.kind << "," << r.maps << "," << r.size << "," << r.kernel << ","
       << r.params << "," << r.connections << "\n";
  }
  return os.str();
}

inline std::string render_text(const SummaryReport& report) {
  const char* headers[7] = {"id", "operation", "maps", "size", "kernel", "params", "connections"};
  std::vector<std::vector<std::string>> cells;
  for (const LayerReport& r : report.rows) {
    cells.push_back({r.id, r.kind, std::to_string(r.maps), r.size, r.kernel,
                     std::to_string(r.params), std::to_string(r.connections)});
  }
  std::size_t width[7];
  for (std::size_t c = 0; c < 7; ++c) {
    width[c] = std::string(headers[c]).size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  os << "architecture: " << report.name << "\n";
  for (std::size_t c = 0; c < 7; ++c) {
    os << std::left << std::setw(static_cast<int>(width[c]) + 2) << headers[c];
  }
  os << "\n";
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < 7; ++c) {
      os << std::left << std::setw(static_cast<int>(width[c]) + 2) << row[c];
    }
    os << "\n";
  }
  os << "total parameters: " << report.total_params << " (~" << format_millions(report.total_params)
     << ")\n";
  os << "bias rule: standard, (F*F*Cin+1)*Cout per conv layer. An alternate published rule\n"
     << "F*(F+1)*Cin*Cout and the expression ((F*F+1)*Cin)*Cout sometimes quoted with it give\n"
     << "540 and 468 for a 5x5 conv over 3->6 maps where the standard rule gives 456; the\n"
     << "analyzer and the model builders use the standard rule throughout.\n";
  return os.str();
}

// A golden table is the analyzer CSV, optionally with an eighth `waiver`
// column whose non-empty text accepts a known mismatch on that row.
struct GoldenRow {
  LayerReport expected;
  std::string waiver;
};

inline std::vector<GoldenRow> parse_golden(const std::string& text) {
  std::vector<GoldenRow> rows;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    const std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (first) {
      first = false;
      if (t.substr(0, 3) == "id,") continue;  // header
    }
    const auto fields = split(t, ',');
    if (fields.size() != 7 && fields.size() != 8) {
      throw ParseError("golden row needs 7 or 8 fields: '" + std::string(t) + "'");
    }
    GoldenRow row;
    row.expected.id = fields[0];
    row.expected.kind = fields[1];
    row.expected.maps = static_cast<std::uint64_t>(parse_int(fields[2], "golden maps"));
    row.expected.size = fields[3];
    row.expected.kernel = fields[4];
    row.expected.params = static_cast<std::uint64_t>(parse_int(fields[5], "golden params"));
    row.expected.connections =
        static_cast<std::uint64_t>(parse_int(fields[6], "golden connections"));
    if (fields.size() == 8) row.waiver = fields[7];
    rows.push_back(std::move(row));
  }
  return rows;
}

struct GoldenCompare {
  std::vector<std::string> mismatches;        // hard failures
  std::vector<std::string> waived;            // known deviations, accepted
  std::uint64_t golden_param_total = 0;       // totals as the golden table states them
  bool ok() const { return mismatches.empty(); }
};

inline GoldenCompare compare_golden(const SummaryReport& report,
                                    const std::vector<GoldenRow>& golden) {
  GoldenCompare result;
  for (const GoldenRow& g : golden) result.golden_param_total += g.expected.params;
  if (report.rows.size() != golden.size()) {
    result.mismatches.push_back("row count " + std::to_string(report.rows.size()) +
                                " differs from golden " + std::to_string(golden.size()));
    return result;
  }
  for (std::size_t i = 0; i < golden.size(); ++i) {
    const LayerReport& a = report.rows[i];
    const LayerReport& e = golden[i].expected;
    std::string diff;
    auto note = [&](const std::string& field, const std::string& got, const std::string& want) {
      if (!diff.empty()) diff += "; ";
      diff += field + " " + got + " != " + want;
    };
    if (a.id != e.id) note("id", a.id, e.id);
    if (a.kind != e.kind) note("kind", a.kind, e.kind);
    if (a.maps != e.maps) note("maps", std::to_string(a.maps), std::to_string(e.maps));
    if (a.size != e.size) note("size", a.size, e.size);
    if (a.kernel != e.kernel) note("kernel", a.kernel, e.kernel);
    if (a.params != e.params) note("params", std::to_string(a.params), std::to_string(e.params));
    if (a.connections != e.connections) {
      note("connections", std::to_string(a.connections), std::to_string(e.connections));
    }
    if (diff.empty()) continue;
    const std::string where = "row " + std::to_string(i) + " (" + e.id + "): " + diff;
    if (!golden[i].waiver.empty()) {
      result.waived.push_back(where + " [waived: " + golden[i].waiver + "]");
    } else {
      result.mismatches.push_back(where);
    }
  }
  return result;
}

}  // namespace glyphnet
