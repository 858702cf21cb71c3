#ifndef BUNDLEGRAPH_BUNDLEGRAPH_HPP
#define BUNDLEGRAPH_BUNDLEGRAPH_HPP

#include "bundlegraph/common.hpp"
#include "bundlegraph/dataset.hpp"
#include "bundlegraph/embedding.hpp"
#include "bundlegraph/sparse_graph.hpp"
#include "bundlegraph/views.hpp"
#include "bundlegraph/augmentation.hpp"
#include "bundlegraph/fusion.hpp"
#include "bundlegraph/objective.hpp"
#include "bundlegraph/optimizer.hpp"
#include "bundlegraph/evaluation.hpp"
#include "bundlegraph/trainer.hpp"
#include "bundlegraph/config.hpp"

#endif  // BUNDLEGRAPH_BUNDLEGRAPH_HPP
