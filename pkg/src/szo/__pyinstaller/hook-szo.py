from PyInstaller.utils.hooks import collect_data_files, collect_submodules

hiddenimports = collect_submodules("szo") + collect_submodules("sacrebleu")
datas = collect_data_files("szo") + collect_data_files("sacrebleu")
