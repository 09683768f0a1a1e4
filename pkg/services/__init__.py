#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Service layer
Orchestrates the pure domain functions; file access goes through repositories
"""

from services.baseline_service import BaselineService
from services.hidemk_service import HiDeMKService
from services.knockoff_service import KnockoffService
from services.pipeline_service import PipelineService
from services.simulation_service import SimulationService

__all__ = ['BaselineService', 'HiDeMKService', 'KnockoffService', 'PipelineService',
           'SimulationService']
