"""实验预设：每个模块导出 EXPERIMENT_META 与入口函数，由 core.experiment_manager 扫描注册"""
