#pragma once

#include <cstdint>
#include <istream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "traceopt/errors.hpp"
#include "traceopt/lie.hpp"
#include "traceopt/problems.hpp"

namespace traceopt {

/// Pose graph as read from a g2o text file. Edge endpoints are remapped to
/// dense positions in `vertices`; the original ids stay alongside.
struct PoseGraph {
  std::vector<std::int64_t> vertex_ids;
  std::vector<PoseSE3> vertices;
  std::vector<PgoEdge> edges;
  std::vector<std::string> warnings;  // skipped unknown tags
};

/// Accepts VERTEX_SE3:QUAT (id x y z qx qy qz qw) and EDGE_SE3:QUAT
/// (i j x y z qx qy qz qw + 21 row-major upper-triangle information
/// entries). Unknown tags are skipped with a warning; malformed lines
/// report their line number.
inline PoseGraph parse_g2o(std::istream& in) {
  PoseGraph g;
  std::unordered_map<std::int64_t, std::int32_t> id_to_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag.empty() || tag[0] == '#') continue;

    if (tag == "VERTEX_SE3:QUAT") {
      std::int64_t id;
      double x, y, z, qx, qy, qz, qw;
      if (!(ls >> id >> x >> y >> z >> qx >> qy >> qz >> qw))
        throw ParseError("malformed VERTEX_SE3:QUAT line", line_no);
      if (id_to_index.count(id)) throw ParseError("duplicate vertex id", line_no);
      id_to_index[id] = static_cast<std::int32_t>(g.vertices.size());
      g.vertex_ids.push_back(id);
      g.vertices.emplace_back(QuatRotation(qx, qy, qz, qw), Vec3(x, y, z));
    } else if (tag == "EDGE_SE3:QUAT") {
      std::int64_t i, j;
      double x, y, z, qx, qy, qz, qw;
      if (!(ls >> i >> j >> x >> y >> z >> qx >> qy >> qz >> qw))
        throw ParseError("malformed EDGE_SE3:QUAT line", line_no);
      Mat6 info;
      for (int r = 0; r < 6; ++r) {
        for (int c = r; c < 6; ++c) {
          double v;
          if (!(ls >> v)) throw ParseError("missing information entries on edge", line_no);
          info(r, c) = v;
          info(c, r) = v;
        }
      }
      const auto it_i = id_to_index.find(i);
      const auto it_j = id_to_index.find(j);
      if (it_i == id_to_index.end() || it_j == id_to_index.end())
        throw ParseError("edge references undeclared vertex", line_no);
      PgoEdge e;
      e.i = it_i->second;
      e.j = it_j->second;
      e.measurement = PoseSE3(QuatRotation(qx, qy, qz, qw), Vec3(x, y, z));
      if (!info.isApprox(Mat6::Identity())) e.information = info;
      g.edges.push_back(e);
    } else {
      g.warnings.push_back("line " + std::to_string(line_no) + ": skipped unknown tag '" +
                           tag + "'");
    }
  }
  return g;
}

inline TracedProblem make_pgo_problem(const PoseGraph& g, bool anchor_first = true) {
  return make_pgo_problem(g.vertices, g.edges, anchor_first);
}

}  // namespace traceopt
