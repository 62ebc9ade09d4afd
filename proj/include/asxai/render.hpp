#pragma once

#include "asxai/explanation.hpp"
#include "asxai/image.hpp"
#include "asxai/percept_study.hpp"

namespace asxai {

/// Bar chart of the global similarity score per class; the predicted class is highlighted.
Image render_similarity_histogram(const ExplanationReport& report);

/// Concepts on a ring, one bubble per candidate class with area proportional to PCS.
Image render_bubble_ring(const ExplanationReport& report);

/// One box plot per (concept, domain) cell, concepts as rows.
Image render_boxplots(const PerceptReport& report);

}  // namespace asxai
