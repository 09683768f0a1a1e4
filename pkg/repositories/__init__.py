# -*- coding: utf-8 -*-
# Artifact storage: CSV tables, JSON records and model checkpoints
